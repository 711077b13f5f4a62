//! Command implementations. Every artifact lands under the run's output
//! directory; stdout carries a short human-readable summary.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use donn::adversarial::{attack_report, flip_records, write_flip_map_csv, AttackConfig};
use donn::autodiff::train;
use donn::calibrate::{phase_scan, phase_scan_pattern};
use donn::checkpoint::{load_model, save_model};
use donn::dataio::{
    parse_idx, parse_images, read_pgm_path, synthetic_digit, write_confusion_csv,
    write_intensity_pgm, write_pgm_path,
};
use donn::error::DonnError;
use donn::field::GridSpec;
use donn::network::readout;
use donn::slm::{encode_image, EncodedImage};

use crate::config::RunConfig;
use crate::error::CliError;

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create out_dir {}: {e}", dir.display())))
}

/// Interior grey image of an encoded (or attacked) two-valued input.
fn encoded_to_image(img: &EncodedImage) -> Array2<f32> {
    let g = img.grid();
    Array2::from_shape_fn((g.ny, g.nx), |(r, c)| {
        if img.feature_mask()[(g.pad + r, g.pad + c)] { 1.0 } else { 0.0 }
    })
}

pub fn cmd_train(config_path: &Path, overrides: &[String]) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path, overrides)?;
    cfg.require_files(true, true)?;
    ensure_out_dir(&cfg.out_dir)?;

    let grid = cfg.grid()?;
    let (train_images, train_labels) = cfg.load_split(grid, true)?;
    let (test_images, test_labels) = cfg.load_split(grid, false)?;
    println!(
        "training {} layers on {} samples of labels {:?} ({} test samples)",
        cfg.layers,
        train_images.len(),
        cfg.labels,
        test_images.len()
    );

    let mut model = cfg.build_model()?;
    let report = train(
        &mut model,
        &train_images,
        &train_labels,
        &test_images,
        &test_labels,
        &cfg.train_config(),
    )?;

    let ckpt = cfg.out_dir.join("model.donn");
    save_model(&model, true, &ckpt)?;
    let history = cfg.out_dir.join("history.csv");
    report.write_history_csv_path(&history)?;
    let confusion_path = cfg.out_dir.join("confusion.csv");
    let confusion = model.confusion_matrix(&test_images, &test_labels)?;
    write_confusion_csv(&confusion, fs::File::create(&confusion_path)?)?;

    println!(
        "epochs run: {}{}",
        report.epochs_run,
        if report.stopped_early { " (stopped early)" } else { "" }
    );
    println!("final train accuracy: {:.4}", report.final_train_accuracy);
    println!("final test accuracy: {:.4}", report.final_test_accuracy);
    println!("straight-through gap: {:.2}%", 100.0 * report.straight_through_gap());
    for p in [&ckpt, &history, &confusion_path] {
        println!("wrote {}", p.display());
    }
    Ok(())
}

pub fn cmd_eval(
    model_path: &Path,
    config_path: &Path,
    overrides: &[String],
) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path, overrides)?;
    cfg.require_files(false, true)?;
    ensure_out_dir(&cfg.out_dir)?;

    let model = load_model(model_path)?;
    let (test_images, test_labels) = cfg.load_split(*model.grid(), false)?;
    let confusion = model.confusion_matrix(&test_images, &test_labels)?;

    let path = cfg.out_dir.join("confusion.csv");
    write_confusion_csv(&confusion, fs::File::create(&path)?)?;
    println!(
        "accuracy: {:.4} over {} samples of labels {:?}",
        confusion.accuracy,
        confusion.total,
        cfg.labels
    );
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_attack(
    model_path: &Path,
    config_path: &Path,
    overrides: &[String],
) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path, overrides)?;
    cfg.require_files(false, true)?;
    ensure_out_dir(&cfg.out_dir)?;

    let model = load_model(model_path)?;
    let (test_images, test_labels) = cfg.load_split(*model.grid(), false)?;
    let attack_cfg = AttackConfig { mask_features: cfg.mask_features, ..Default::default() };
    let report = attack_report(&model, &test_images, &test_labels, &attack_cfg)?;

    let clean_path = cfg.out_dir.join("confusion_clean.csv");
    write_confusion_csv(&report.clean, fs::File::create(&clean_path)?)?;
    let attacked_path = cfg.out_dir.join("confusion_attacked.csv");
    write_confusion_csv(&report.attacked, fs::File::create(&attacked_path)?)?;

    let exported = cfg.attack_samples.min(test_images.len());
    let summary = format!(
        "clean_accuracy = {:.6}\nattacked_accuracy = {:.6}\naccuracy_drop = {:.6}\n\
         total_flips = {}\nmask_features = {}\nsamples_exported = {exported}\n",
        report.clean_accuracy,
        report.attacked_accuracy,
        report.accuracy_drop(),
        report.total_flips,
        cfg.mask_features,
    );
    let summary_path = cfg.out_dir.join("attack_summary.txt");
    fs::write(&summary_path, &summary)?;
    print!("{summary}");

    // per-sample artifacts only for the requested count
    for i in 0..exported {
        let adv = donn::adversarial::cfgsm(&model, &test_images[i], test_labels[i], &attack_cfg)?;
        write_pgm_path(
            &encoded_to_image(&test_images[i]),
            cfg.out_dir.join(format!("clean_{i:03}.pgm")),
        )?;
        write_pgm_path(
            &encoded_to_image(&adv),
            cfg.out_dir.join(format!("adversarial_{i:03}.pgm")),
        )?;
        let records = flip_records(&test_images[i], &adv)?;
        let file = fs::File::create(cfg.out_dir.join(format!("flips_{i:03}.csv")))?;
        write_flip_map_csv(&records, file)?;
    }
    for p in [&clean_path, &attacked_path, &summary_path] {
        println!("wrote {}", p.display());
    }
    if exported > 0 {
        println!(
            "wrote {exported} adversarial sample(s): clean_*.pgm, adversarial_*.pgm, flips_*.csv"
        );
    }
    Ok(())
}

pub struct InferInput {
    pub image: Option<PathBuf>,
    pub synthetic: Option<u8>,
    pub sample_seed: u64,
}

pub fn cmd_infer(
    model_path: &Path,
    input: &InferInput,
    out_dir: &Path,
) -> Result<(), CliError> {
    ensure_out_dir(out_dir)?;
    let model = load_model(model_path)?;
    let grid = *model.grid();

    let raw: Array2<f32> = match (&input.image, input.synthetic) {
        (Some(path), None) => {
            let img = read_pgm_path(path)?;
            if img.dim() != (grid.ny, grid.nx) {
                let (h, w) = img.dim();
                return Err(CliError::Core(DonnError::GridMismatch(format!(
                    "image {} is {h}x{w} pixels but the model camera window is {}x{}",
                    path.display(),
                    grid.ny,
                    grid.nx
                ))));
            }
            img
        }
        (None, Some(digit)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(input.sample_seed);
            let img = synthetic_digit(digit, grid.ny.max(8), &mut rng)?;
            if img.dim() != (grid.ny, grid.nx) {
                return Err(CliError::Config(format!(
                    "--synthetic needs a square model window of side >= 8, this model has {}x{}",
                    grid.ny, grid.nx
                )));
            }
            img
        }
        _ => {
            return Err(CliError::Config(
                "exactly one of --image and --synthetic is required".into(),
            ))
        }
    };

    let encoded = encode_image(&raw, grid)?;
    let trace = model.forward_deterministic(&encoded)?;
    let decided = readout(&trace);
    let predicted = model
        .labels()
        .iter()
        .find(|&&l| l as usize == decided.label)
        .copied();
    match predicted {
        Some(l) => println!("predicted label: {l}"),
        // argmax landed on a slot this model never drives (dark-camera default)
        None => println!("predicted slot: {} (not a trained label)", decided.label),
    }
    if decided.degenerate {
        println!("warning: dark camera, prediction defaulted");
    }
    println!("region percentages:");
    for (label, pct) in model.labels().iter().zip(decided.percentages.iter()) {
        println!("  label {label}: {pct:.2}%");
    }

    let pgm = out_dir.join("camera.pgm");
    let peak = write_intensity_pgm(&trace.intensity, &pgm)?;
    println!("wrote {} (peak intensity {peak:.6e})", pgm.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_calibrate(
    grid_n: usize,
    pad: usize,
    square: usize,
    z: f64,
    pitch: f64,
    wavelength: f64,
    steps: usize,
    out_dir: &Path,
) -> Result<(), CliError> {
    if steps < 2 {
        return Err(CliError::Config(format!("--steps must be >= 2, got {steps}")));
    }
    if !(z > 0.0) || !(pitch > 0.0) || !(wavelength > 0.0) {
        return Err(CliError::Config(
            "z, pitch, and wavelength must be positive".into(),
        ));
    }
    ensure_out_dir(out_dir)?;

    let grid = GridSpec::square(grid_n, pitch, wavelength, pad)?;
    let phis: Vec<f64> = (0..steps).map(|i| i as f64 * PI / (steps - 1) as f64).collect();
    let scan = phase_scan(&grid, square, z, &phis)?;

    println!("phi/pi   center intensity");
    for (p, i) in scan.phis.iter().zip(scan.center_intensities.iter()) {
        println!("{:6.3}   {i:.6e}", p / PI);
    }
    println!("brightest at phi = {:.3} pi", scan.phis[scan.argmax] / PI);
    let plateau = scan.plateau(0.5);
    let lo = plateau.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = plateau.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("half-max plateau: phi in [{:.3} pi, {:.3} pi]", lo / PI, hi / PI);

    let csv_path = out_dir.join("scan.csv");
    scan.write_csv(fs::File::create(&csv_path)?)?;
    println!("wrote {}", csv_path.display());
    for (idx, &phi) in phis.iter().enumerate() {
        let pattern = phase_scan_pattern(&grid, square, z, phi)?;
        let path = out_dir.join(format!("pattern_{idx:02}.pgm"));
        write_intensity_pgm(&pattern, &path)?;
    }
    println!("wrote {steps} camera patterns (pattern_*.pgm)");
    Ok(())
}

pub fn cmd_idx_info(images: &Path, labels: Option<&Path>) -> Result<(), CliError> {
    let image_bytes = fs::read(images)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", images.display())))?;
    match labels {
        None => {
            let (imgs, rows, cols) = parse_images(&image_bytes)?;
            println!("{}: {} images of {rows}x{cols}", images.display(), imgs.len());
        }
        Some(labels) => {
            let label_bytes = fs::read(labels)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", labels.display())))?;
            let set = parse_idx(&image_bytes, &label_bytes, &images.display().to_string())?;
            println!(
                "{}: {} images of {}x{}",
                images.display(),
                set.len(),
                set.side(),
                set.side()
            );
            let mut counts = [0usize; 10];
            for &l in set.labels() {
                counts[l as usize] += 1;
            }
            println!("label counts:");
            for (digit, n) in counts.iter().enumerate() {
                if *n > 0 {
                    println!("  {digit}: {n}");
                }
            }
        }
    }
    Ok(())
}
