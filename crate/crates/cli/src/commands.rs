use std::fs;
use std::path::{Path, PathBuf};

use candle_core::Device;
use maskcycle_core::data_pipeline::synth::{write_digit_domains, SynthConfig};
use maskcycle_core::data_pipeline::{list_images, DatasetSpec};
use maskcycle_core::evaluation::{
    cache_root_from_env, fid_matrix, render_output_grid, FidOptions, EXTRACTOR_IDS,
};
use maskcycle_core::mask_gen::{decode_png_resized, sample_centered_square, sample_round, write_png};
use maskcycle_core::trainer::{fit, TrainConfig};
use maskcycle_core::{img, Checkpoint, Error, Image, Mask, MaskSampler, NetConfig, RngState};

use crate::args::*;

/// Exit code 1 for `Validation`, 2 for `Runtime`.
#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

fn require_file(path: &Path, what: &str) -> Outcome {
    if !path.is_file() {
        return Err(invalid(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

fn require_dir(path: &Path, what: &str) -> Outcome {
    if !path.is_dir() {
        return Err(invalid(format!("{what} {} is not a directory", path.display())));
    }
    Ok(())
}

fn create_dir(path: &Path) -> Outcome {
    fs::create_dir_all(path)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", path.display())))
}

fn load_ckpt(path: &Path) -> Result<Checkpoint, Failure> {
    require_file(path, "checkpoint")?;
    Ok(Checkpoint::load(path, &Device::Cpu)?)
}

/// Binary mask PNG resampled to `size` with nearest-neighbor lookup.
fn read_mask(path: &Path, size: usize) -> Result<Mask, Error> {
    let bytes = fs::read(path).map_err(|e| Error::Load(format!("cannot read {}: {e}", path.display())))?;
    decode_png_resized(&bytes, size)
}

fn check_scales(scales: &[f64]) -> Outcome {
    if scales.is_empty() {
        return Err(invalid("at least one scale is required"));
    }
    if let Some(s) = scales.iter().find(|s| !(**s > 0.0 && **s <= 1.0)) {
        return Err(invalid(format!("scale must lie in (0, 1], got {s}")));
    }
    Ok(())
}

pub fn train_config(args: &TrainArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => {
            require_file(path, "config")?;
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", path.display())))?;
            serde_json::from_str::<TrainConfig>(&text)
                .map_err(|e| invalid(format!("invalid config {}: {e}", path.display())))?
        }
        None => {
            let root = args
                .data
                .clone()
                .ok_or_else(|| invalid("--data is required without --config"))?;
            TrainConfig::new(DatasetSpec::new(root, 128), 200_000)
        }
    };
    if let Some(v) = &args.data {
        cfg.dataset.root = v.clone();
    }
    if let Some(v) = args.resolution {
        cfg.dataset.resolution = v;
        if let Some(net) = cfg.net.as_mut() {
            net.resolution = v;
        }
    }
    macro_rules! set {
        ($($flag:ident => $($field:ident).+;)*) => {
            $(if let Some(v) = args.$flag { cfg.$($field).+ = v; })*
        };
    }
    set! {
        iterations => iterations;
        seed => seed;
        batch_size => dataset.batch_size;
        lr => learning_rate;
        lambda_gan_m => weights.lambda_gan_m;
        lambda_cyc_m => weights.lambda_cyc_m;
        lambda_cyc => weights.lambda_cyc;
        lambda_idt => weights.lambda_idt;
        checkpoint_every => checkpoint_every;
        snapshot_every => snapshot_every;
        pool_size => pool_size;
    }
    if args.max_images.is_some() {
        cfg.dataset.max_images = args.max_images;
    }
    if args.lr_decay_start.is_some() {
        cfg.lr_decay_start = args.lr_decay_start;
    }
    let net_flags = [args.gen_filters, args.encoder_filters, args.res_blocks, args.disc_filters];
    if net_flags.iter().any(Option::is_some) {
        let base = cfg.net_config();
        cfg.net = Some(NetConfig {
            resolution: cfg.dataset.resolution,
            gen_filters: args.gen_filters.unwrap_or(base.gen_filters),
            encoder_filters: args.encoder_filters.unwrap_or(base.encoder_filters),
            res_blocks: args.res_blocks.unwrap_or(base.res_blocks),
            disc_filters: args.disc_filters.unwrap_or(base.disc_filters),
        });
    }
    if let Some(scheme) = args.scheme.scheme().map_err(invalid)? {
        cfg.scheme = scheme;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(args: TrainArgs) -> Outcome {
    let cfg = train_config(&args)?;
    if args.dump_config {
        let json = serde_json::to_string_pretty(&cfg).expect("config serializes");
        println!("{json}");
        return Ok(());
    }
    let out = args.out.as_deref().expect("clap requires --out");
    if let Some(r) = &args.resume {
        require_file(r, "resume checkpoint")?;
    }
    require_dir(&cfg.dataset.root, "dataset root")?;
    let outcome = fit(&cfg, out, args.resume.as_deref(), &Device::Cpu)?;
    if let Some(last) = outcome.reports.last() {
        println!(
            "iteration {}: total {:.4}, cycle {:.4}/{:.4}, disc {:.4}/{:.4}",
            last.iter, last.total, last.cyc_a, last.cyc_b, last.d_a, last.d_b
        );
    }
    println!("final checkpoint: {}", outcome.final_path.display());
    Ok(())
}

pub fn fid(args: FidArgs) -> Outcome {
    check_scales(&args.scales)?;
    if !EXTRACTOR_IDS.contains(&args.extractor.as_str()) {
        return Err(invalid(format!(
            "unknown extractor {:?}; expected one of {}",
            args.extractor,
            EXTRACTOR_IDS.join(", ")
        )));
    }
    require_dir(&args.data, "dataset root")?;
    let ckpt = load_ckpt(&args.ckpt)?;
    let mut spec = DatasetSpec::new(&args.data, ckpt.resolution());
    spec.max_images = args.max_images;
    let opts = FidOptions {
        extractor_id: args.extractor.clone(),
        include_train_half: !args.no_train_half,
        cache_root: cache_root_from_env(),
    };
    let matrix = fid_matrix(&ckpt, &spec, &args.scales, args.dir.into(), &opts)?;
    create_dir(&args.out)?;
    let json_path = args.out.join("fid_matrix.json");
    fs::write(&json_path, matrix.to_json())
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", json_path.display())))?;
    matrix.heatmap(32).save_png(&args.out.join("fid_matrix.png"))?;

    let width = matrix.labels.iter().map(String::len).max().unwrap_or(0).max(9);
    print!("{:width$}", "");
    for l in &matrix.labels {
        print!(" {l:>width$}");
    }
    println!();
    for (l, row) in matrix.labels.iter().zip(&matrix.values) {
        print!("{l:width$}");
        for v in row {
            print!(" {v:>width$.3}");
        }
        println!();
    }
    for c in &matrix.comparisons {
        println!(
            "FID({r}, {a}) < FID({r}, {b}): {}",
            c.holds,
            r = c.reference,
            a = c.lhs,
            b = c.rhs
        );
    }
    println!("wrote {}", json_path.display());
    Ok(())
}

pub fn grid(args: GridArgs) -> Outcome {
    let sources_paths: Vec<PathBuf> = match &args.image_dir {
        Some(dir) => {
            require_dir(dir, "image directory")?;
            if args.count == 0 {
                return Err(invalid("--count must be positive"));
            }
            list_images(dir)?.into_iter().take(args.count).collect()
        }
        None => args.images.clone(),
    };
    if sources_paths.is_empty() {
        return Err(invalid("no source images"));
    }
    for p in &sources_paths {
        require_file(p, "image")?;
    }
    for p in &args.masks {
        require_file(p, "mask")?;
    }
    if args.masks.is_empty() {
        check_scales(&args.scales)?;
    }
    let ckpt = load_ckpt(&args.ckpt)?;
    let size = ckpt.resolution();
    let sources = sources_paths
        .iter()
        .map(|p| Ok(Image::open(p)?.resize(size, size)))
        .collect::<Result<Vec<_>, Error>>()?;
    let masks: Vec<Mask> = if args.masks.is_empty() {
        args.scales
            .iter()
            .map(|&s| match args.shape {
                GridShape::Square => sample_centered_square(size, s),
                GridShape::Round => sample_round(size, s),
            })
            .collect::<Result<_, Error>>()?
    } else {
        args.masks
            .iter()
            .map(|p| read_mask(p, size))
            .collect::<Result<_, Error>>()?
    };
    let grid = render_output_grid(&ckpt, args.dir.into(), &sources, &masks)?;
    grid.image.save_png(&args.out)?;
    println!(
        "wrote {} ({} sources x {} masks)",
        args.out.display(),
        sources.len(),
        masks.len()
    );
    Ok(())
}

pub fn masks(args: MasksArgs) -> Outcome {
    let scheme = args
        .scheme
        .scheme()
        .map_err(invalid)?
        .ok_or_else(|| invalid("--scheme is required"))?;
    if args.count == 0 {
        return Err(invalid("--count must be positive"));
    }
    let sampler = MaskSampler::new(scheme, args.size)?;
    create_dir(&args.out)?;
    let mut rng = RngState::new(args.seed);
    for k in 0..args.count {
        let mask = sampler.sample(&mut rng)?;
        write_png(&mask, &args.out.join(format!("mask_{k:03}.png")))?;
    }
    println!("wrote {} masks to {}", args.count, args.out.display());
    Ok(())
}

pub fn translate(args: TranslateArgs) -> Outcome {
    require_file(&args.image, "image")?;
    if let Some(m) = &args.mask {
        require_file(m, "mask")?;
    }
    let ckpt = load_ckpt(&args.ckpt)?;
    let size = ckpt.resolution();
    let image = Image::open(&args.image)?.resize(size, size);
    let mask = match &args.mask {
        Some(p) => read_mask(p, size)?,
        None => Mask::full(size),
    };
    let device = Device::Cpu;
    let x = img::stack(std::slice::from_ref(&image), &device)?;
    let y = ckpt
        .generators
        .get(args.dir.into())
        .forward(&x, &mask.to_tensor(&device)?)?;
    img::unstack(&y)?.remove(0).save_png(&args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

pub fn serve(args: ServeArgs) -> Outcome {
    require_file(&args.ckpt, "checkpoint")?;
    let _ = maskcycle_service::cors_layer(&args.cors_origins).map_err(invalid)?;
    let cfg = maskcycle_service::ServeConfig {
        checkpoint: args.ckpt,
        host: args.host,
        port: args.port,
        cors_origins: args.cors_origins,
    };
    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| Failure::Runtime(format!("cannot start runtime: {e}")))?;
    runtime
        .block_on(maskcycle_service::serve(cfg))
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidInput => invalid(e.to_string()),
            _ => Failure::Runtime(format!("server error: {e}")),
        })
}

pub fn synth(args: SynthArgs) -> Outcome {
    if args.size < 8 {
        return Err(invalid("--size must be at least 8"));
    }
    if args.train_per_domain == 0 || args.test_per_domain == 0 {
        return Err(invalid("image counts must be positive"));
    }
    let cfg = SynthConfig {
        size: args.size,
        train_per_domain: args.train_per_domain,
        test_per_domain: args.test_per_domain,
        seed: args.seed,
    };
    let dirs = write_digit_domains(&args.out, &cfg)?;
    for d in dirs {
        println!("{}", d.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    fn parse(argv: &[&str]) -> TrainArgs {
        match crate::args::Cli::try_parse_from(argv).unwrap().command {
            Command::Train(t) => t,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        let mut base = TrainConfig::new(DatasetSpec::new("/data", 64), 1000);
        base.seed = 3;
        fs::write(&path, serde_json::to_string(&base).unwrap()).unwrap();
        let p = path.to_str().unwrap();
        let cfg = train_config(&parse(&["maskcycle", "train", "--config", p, "--dump-config", "--iterations", "10", "--lambda-cyc-m", "0.7"])).unwrap();
        assert_eq!(cfg.iterations, 10);
        assert_eq!(cfg.weights.lambda_cyc_m, 0.7);
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.dataset.resolution, 64);
    }

    #[test]
    fn scheme_flags_build_schemes() {
        let cfg = train_config(&parse(&[
            "maskcycle", "train", "--data", "/d", "--dump-config", "--scheme", "round", "--scale", "0.5",
        ]))
        .unwrap();
        assert_eq!(cfg.scheme, maskcycle_core::MaskScheme::Round { scale: 0.5 });
        let err = train_config(&parse(&["maskcycle", "train", "--data", "/d", "--dump-config", "--scheme", "round"]));
        assert!(matches!(err, Err(Failure::Validation(_))));
        let err = train_config(&parse(&["maskcycle", "train", "--data", "/d", "--dump-config", "--scale", "0.5"]));
        assert!(matches!(err, Err(Failure::Validation(_))));
    }

    #[test]
    fn net_flags_fill_from_resolution_defaults() {
        let cfg = train_config(&parse(&[
            "maskcycle", "train", "--data", "/d", "--dump-config", "--resolution", "32", "--res-blocks", "2",
        ]))
        .unwrap();
        let net = cfg.net.unwrap();
        assert_eq!(net.res_blocks, 2);
        assert_eq!(net.resolution, 32);
        assert_eq!(net.gen_filters, NetConfig::for_resolution(32).gen_filters);
    }

    #[test]
    fn invalid_values_are_validation_failures() {
        let err = train_config(&parse(&["maskcycle", "train", "--data", "/d", "--dump-config", "--lr=-1"]));
        assert!(matches!(err, Err(Failure::Validation(_))));
        let err = train_config(&parse(&["maskcycle", "train", "--dump-config"]));
        assert!(matches!(err, Err(Failure::Validation(_))));
    }
}
