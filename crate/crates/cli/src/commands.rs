use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use wfdiff_core::forward::{corrupt_to, forward_trajectory};
use wfdiff_core::io::{load_checkpoint, read_image, synth_dataset, write_image, RunConfig};
use wfdiff_core::metrics::{band_energy, psnr, radial_power_spectrum};
use wfdiff_core::model::Condition;
use wfdiff_core::sampler::{sample_many, SampleOptions};
use wfdiff_core::spectral::{dft2_reference, dwt2_haar, fft2, idwt2_haar, max_radius, Plane};
use wfdiff_core::trainer::{loss_ratio, train as run_training, TrainOutput, Trainer, LOSS_WINDOW};
use wfdiff_core::{decompose as to_state, make_schedule, reconstruct, DiffusionSchedule};
use wfdiff_core::{ImageTensor, RngStream};

use crate::error::CliError;
use crate::render;

/// Writes to stdout, ignoring a closed pipe (`wfdiff spectra | head`).
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

const BAND_NAMES: [&str; 3] = ["lh", "hl", "hh"];

/// `decompose`: the low band, its log-magnitude spectrum and every detail
/// plane as images, plus per-band energies.
pub fn decompose(cfg: &RunConfig, input: &Path, out: &Path) -> Result<(), CliError> {
    let img = read_image(input)?;
    let state = to_state(&img, cfg.levels)?;
    create_dir(out)?;
    let ext = render::extension(img.channels);
    let pyramid = dwt2_haar(&img, cfg.levels)?;
    let lf = pyramid
        .lf
        .iter()
        .map(|p| render::low_band(p, cfg.levels))
        .collect();
    render::write_planes(&out.join(format!("lf.{ext}")), lf)?;
    let spec = state.spectrum.iter().map(render::log_magnitude).collect();
    render::write_planes(&out.join(format!("spectrum.{ext}")), spec)?;
    for k in 0..state.meta.bands() {
        let level = k / 3 + 1;
        let planes = pyramid
            .hf
            .iter()
            .map(|b| render::detail(&b[k], level))
            .collect();
        let name = format!("hf_l{level}_{}.{ext}", BAND_NAMES[k % 3]);
        render::write_planes(&out.join(name), planes)?;
    }
    let energy = band_energy(&pyramid);
    let mut csv = String::from("channel,band,energy\n");
    for (c, (lf, hf)) in energy.lf.iter().zip(&energy.hf).enumerate() {
        writeln!(csv, "{c},lf,{lf:e}").unwrap();
        for (k, e) in hf.iter().enumerate() {
            writeln!(csv, "{c},l{}_{},{e:e}", k / 3 + 1, BAND_NAMES[k % 3]).unwrap();
        }
    }
    write_text(&out.join("bands.csv"), &csv)?;
    emit(&csv);
    Ok(())
}

/// A checkpoint's schedule, or one built from the config and calibrated on
/// the input state.
fn schedule_for(
    cfg: &RunConfig,
    state: &wfdiff_core::SpectralState,
    ckpt: Option<&Path>,
) -> Result<DiffusionSchedule, CliError> {
    match ckpt {
        Some(p) => Ok(load_checkpoint(p)?.schedule),
        None => {
            let mut s = make_schedule(&cfg.train.schedule, state.meta.lf_dims())?;
            s.calibrate(std::slice::from_ref(state))?;
            Ok(s)
        }
    }
}

/// `corrupt`: one draw of the state at step t, reconstructed to pixels.
pub fn corrupt(
    cfg: &RunConfig,
    input: &Path,
    out: &Path,
    t: usize,
    seed: u64,
    ckpt: Option<&Path>,
) -> Result<(), CliError> {
    let img = read_image(input)?;
    let state = to_state(&img, cfg.levels)?;
    let schedule = schedule_for(cfg, &state, ckpt)?;
    let xt = corrupt_to(&state, t, &schedule, &mut RngStream::new(seed))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_image(out, &reconstruct(&xt)?)?;
    Ok(())
}

/// `chain`: reconstructions of a single forward trajectory.
pub fn chain(
    cfg: &RunConfig,
    input: &Path,
    out: &Path,
    ts: &[usize],
    seed: u64,
    ckpt: Option<&Path>,
) -> Result<(), CliError> {
    let img = read_image(input)?;
    let state = to_state(&img, cfg.levels)?;
    let schedule = schedule_for(cfg, &state, ckpt)?;
    let steps = schedule.steps;
    let ts: Vec<usize> = if ts.is_empty() {
        (0..=4).map(|q| q * steps / 4).collect()
    } else {
        ts.to_vec()
    };
    if let Some(&bad) = ts.iter().find(|&&t| t > steps) {
        return Err(wfdiff_core::Error::StepRange {
            t: bad,
            lo: 0,
            hi: steps,
        }
        .into());
    }
    let trajectory = forward_trajectory(&state, &schedule, &mut RngStream::new(seed))?;
    create_dir(out)?;
    let ext = render::extension(img.channels);
    let mut csv = String::from("t,file,psnr_db\n");
    for &t in &ts {
        let rec = reconstruct(&trajectory[t])?;
        let name = format!("chain_t{t:04}.{ext}");
        write_image(&out.join(&name), &rec)?;
        writeln!(csv, "{t},{name},{:.4}", psnr(&img, &rec.clamped())?).unwrap();
    }
    write_text(&out.join("chain.csv"), &csv)?;
    emit(&csv);
    Ok(())
}

/// `train`: the synthetic dataset from the config, checkpoints and a loss
/// log under `out`.
pub fn train(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<(), CliError> {
    let data = synth_dataset(&cfg.data)?;
    let mut trainer = match resume {
        Some(p) => Trainer::resume(cfg.train.clone(), &data, load_checkpoint(p)?)?,
        None => Trainer::new(cfg.train.clone(), &data, cfg.levels)?,
    };
    let output = TrainOutput {
        dir: out.to_path_buf(),
    };
    let records = run_training(&mut trainer, Some(&output))?;
    let losses: Vec<f64> = records.iter().map(|r| r.loss).collect();
    let ratio =
        loss_ratio(&losses, LOSS_WINDOW).map_or_else(|| "n/a".to_string(), |r| format!("{r:.4}"));
    emit(&format!(
        "trained steps={} new_steps={} loss_ratio={ratio} checkpoint={}\n",
        trainer.step,
        records.len(),
        output.final_path().display()
    ));
    Ok(())
}

/// `sample`: `count` images from a checkpoint, written clamped.
pub fn sample(
    cfg: &RunConfig,
    ckpt_path: &Path,
    class: Option<usize>,
    seed: u64,
    count: usize,
    out: &Path,
) -> Result<(), CliError> {
    let ckpt = load_checkpoint(ckpt_path)?;
    let hyper = &ckpt.model.hyper;
    let condition = match class {
        None => Condition::Unconditional,
        Some(k) if k < hyper.num_classes => Condition::Class(k),
        Some(k) => {
            return Err(CliError::new(
                "invalid",
                format!(
                    "class {k} out of range, checkpoint has {} classes",
                    hyper.num_classes
                ),
            ))
        }
    };
    let (h, w) = ckpt.image_dims;
    let meta = wfdiff_core::StateMeta::new(h, w, hyper.channels, hyper.levels)?;
    let options = SampleOptions {
        stochastic: cfg.stochastic,
        reverse_variance: if cfg.stochastic {
            ckpt.reverse_variance.clone()
        } else {
            None
        },
    };
    let samples = sample_many(
        &ckpt.model,
        condition,
        &ckpt.schedule,
        meta,
        &options,
        count,
        &mut RngStream::new(seed),
    )?;
    create_dir(out)?;
    let ext = render::extension(hyper.channels);
    for (i, s) in samples.iter().enumerate() {
        let path = out.join(format!("sample_{i:04}.{ext}"));
        write_image(&path, &s.clamped)?;
        emit(&format!("{}\n", path.display()));
    }
    Ok(())
}

const WAVELET_TOL: f64 = 1e-12;
const FFT_TOL: f64 = 1e-9;
const STATE_TOL: f64 = 1e-9;

fn random_image(h: usize, w: usize, channels: usize, rng: &mut RngStream) -> ImageTensor {
    let data = (0..h * w * channels).map(|_| rng.uniform()).collect();
    ImageTensor::new(h, w, channels, data).expect("sizes agree")
}

/// `roundtrip`: wavelet, Fourier and full-state checks on random images.
/// Fails when any error exceeds its tolerance.
pub fn roundtrip(seed: u64, count: usize, out: &Path) -> Result<(), CliError> {
    let mut rng = RngStream::new(seed);
    let mut rows: Vec<(String, String, f64, f64)> = Vec::new();
    for size in [16, 32, 64] {
        for levels in 1..=3 {
            let mut worst = 0.0f64;
            for _ in 0..count {
                let img = random_image(size, size, 1, &mut rng);
                let back = idwt2_haar(&dwt2_haar(&img, levels)?)?;
                worst = worst.max(img.max_abs_diff(&back));
            }
            rows.push((
                "wavelet".into(),
                format!("{size}x{size} L{levels}"),
                worst,
                WAVELET_TOL,
            ));
        }
    }
    let sizes = [2usize, 4, 8, 16, 32];
    for &h in &sizes {
        for &w in &sizes {
            let img = random_image(h, w, 1, &mut rng);
            let p = img.plane(0);
            let fast = fft2(&p)?;
            let slow = dft2_reference(&p)?;
            let diff = fast
                .re
                .iter()
                .zip(&slow.re)
                .chain(fast.im.iter().zip(&slow.im))
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            rows.push(("fft_vs_dft".into(), format!("{h}x{w}"), diff, FFT_TOL));
            let n = (h * w) as f64;
            let parseval = (fast.power() - n * p.energy()).abs() / (n * p.energy());
            rows.push(("parseval".into(), format!("{h}x{w}"), parseval, FFT_TOL));
        }
    }
    for channels in [1, 3] {
        let mut worst = 0.0f64;
        for _ in 0..count {
            let img = random_image(16, 16, channels, &mut rng);
            let back = reconstruct(&to_state(&img, 1)?)?;
            worst = worst.max(img.max_abs_diff(&back));
        }
        rows.push((
            "state".into(),
            format!("16x16x{channels}"),
            worst,
            STATE_TOL,
        ));
    }

    create_dir(out)?;
    let mut csv = String::from("check,case,max_error,tolerance,pass\n");
    let mut failed = Vec::new();
    for (check, case, err, tol) in &rows {
        let pass = *err <= *tol;
        if !pass {
            failed.push(format!("{check} {case}"));
        }
        writeln!(csv, "{check},{case},{err:e},{tol:e},{pass}").unwrap();
    }
    write_text(&out.join("roundtrip.csv"), &csv)?;
    emit(&csv);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::new(
            "tolerance",
            format!(
                "{} checks above tolerance: {}",
                failed.len(),
                failed.join(", ")
            ),
        ))
    }
}

fn collect_images(inputs: &[PathBuf]) -> Result<Vec<(String, ImageTensor)>, CliError> {
    let mut paths = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| CliError::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| matches!(f.extension().and_then(|x| x.to_str()), Some("pgm" | "ppm")))
                .collect();
            found.sort();
            paths.extend(found);
        } else {
            paths.push(p.clone());
        }
    }
    paths
        .into_iter()
        .map(|p| Ok((p.display().to_string(), read_image(&p)?)))
        .collect()
}

/// `spectra`: radial power spectrum and band energies of every image.
pub fn spectra(cfg: &RunConfig, inputs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let images = if inputs.is_empty() {
        synth_dataset(&cfg.data)?
            .into_iter()
            .enumerate()
            .map(|(i, e)| (format!("synth_{i:04}"), e.image))
            .collect()
    } else {
        collect_images(inputs)?
    };
    if images.is_empty() {
        return Err(CliError::new("invalid", "no images to analyse"));
    }
    let nbins = cfg.nbins;
    let mut radial = String::from("image,channel,bin,rho_lo,rho_hi,count,power\n");
    let mut bands = String::from("image,channel,band,energy\n");
    let mut mean = vec![0.0; nbins];
    let mut planes = 0usize;
    for (name, img) in &images {
        for c in 0..img.channels {
            let p: Plane = img.plane(c);
            let r = radial_power_spectrum(&p, nbins)?;
            let width = max_radius(p.height, p.width) / nbins as f64;
            for (b, acc) in mean.iter_mut().enumerate() {
                writeln!(
                    radial,
                    "{name},{c},{b},{:.6},{:.6},{},{:e}",
                    b as f64 * width,
                    (b + 1) as f64 * width,
                    r.counts[b],
                    r.mean[b]
                )
                .unwrap();
                *acc += r.mean[b];
            }
            planes += 1;
        }
        let e = band_energy(&dwt2_haar(img, cfg.levels)?);
        for (c, (lf, hf)) in e.lf.iter().zip(&e.hf).enumerate() {
            writeln!(bands, "{name},{c},lf,{lf:e}").unwrap();
            for (k, v) in hf.iter().enumerate() {
                writeln!(
                    bands,
                    "{name},{c},l{}_{},{v:e}",
                    k / 3 + 1,
                    BAND_NAMES[k % 3]
                )
                .unwrap();
            }
        }
    }
    create_dir(out)?;
    write_text(&out.join("radial.csv"), &radial)?;
    write_text(&out.join("bands.csv"), &bands)?;
    let mut summary = String::from("bin,mean_power\n");
    for (b, m) in mean.iter().enumerate() {
        writeln!(summary, "{b},{:e}", m / planes as f64).unwrap();
    }
    emit(&summary);
    Ok(())
}
