use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;

use log::info;
use tomomar::geometry::{image_to_hu, MU_WATER_PER_MM};
use tomomar::io::{export_png, load_tensor, save_tensor, WindowSpec};
use tomomar::mar::{iterative_mar, li_inpaint, trace_refine};
use tomomar::metrics::evaluate;
use tomomar::ril::ril_forward;
use tomomar::simulate::{make_instance, INSTANCE_FILES};
use tomomar::verify::gradcheck;
use tomomar::{
    BinaryMask, FanGeometry, ImageGrid, MetalMask, MetalTrace, NoiseSpec, Result, RilPlan, ScanConfig, Sinogram,
    SolverConfig, Spectrum, Tensor2D, TomoError,
};

use crate::manifest::PipelineManifest;
use crate::{Cli, Command, MarMode};

const GRADCHECK_TOL_F64: f64 = 1e-8;
const GRADCHECK_TOL_F32: f64 = 1e-4;

pub fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Phantom(a) => {
            let mut cfg = load_config(a.config.as_deref())?;
            if let Some(side) = a.side {
                cfg.side = side;
                cfg.validate()?;
            }
            let x = cfg.phantom::<f64>()?;
            save_tensor(x.values(), &a.out)?;
            if let Some(path) = &a.metal_out {
                save_tensor(&cfg.metal_mask()?.mask().to_tensor::<f64>(), path)?;
            }
        }
        Command::Simulate(a) => {
            let cfg = load_config(a.geom.as_deref())?;
            let x = load_image(&a.phantom, &cfg)?;
            let metal = match &a.metal {
                Some(p) => MetalMask::new(load_mask(p)?)?,
                None => MetalMask::empty(cfg.side),
            };
            if metal.side() != cfg.side {
                return Err(TomoError::DimMismatch(format!("metal mask side {} vs config side {}", metal.side(), cfg.side)));
            }
            let spectrum = match &a.spectrum {
                Some(p) => Spectrum::load_csv(p)?,
                None => Spectrum::default(),
            };
            let noise = (!a.no_noise).then(|| NoiseSpec::new(cfg.photons, a.seed)).transpose()?;
            let plan = RilPlan::new(cfg.fan_geometry()?)?;
            let inst = make_instance(&x, &metal, &spectrum, noise.as_ref(), &plan, a.supersample)?;
            inst.save(&a.outdir)?;
            let mut outputs: BTreeMap<&'static str, String> =
                INSTANCE_FILES.iter().map(|f| (f.trim_end_matches(".tomo"), f.to_string())).collect();
            outputs.insert("instance", "instance.json".into());
            let path_str = |p: &Option<std::path::PathBuf>| p.as_ref().map(|p| p.display().to_string());
            let manifest = PipelineManifest {
                tool: "tomomar",
                version: env!("CARGO_PKG_VERSION"),
                command: "simulate",
                inputs: BTreeMap::from([
                    ("phantom", Some(a.phantom.display().to_string())),
                    ("metal", path_str(&a.metal)),
                    ("spectrum", path_str(&a.spectrum)),
                    ("geom", path_str(&a.geom)),
                ]),
                config: cfg,
                spectrum: spectrum.bins().to_vec(),
                noise,
                supersample: a.supersample,
                outputs,
            };
            manifest.write(&a.outdir.join("manifest.json"))?;
            info!("trace covers {} sinogram entries", inst.trace.count());
        }
        Command::Fbp(a) => {
            let cfg = load_config(a.geom.as_deref())?;
            let fan = cfg.fan_geometry()?;
            let y = load_sino(&a.sino, fan)?;
            let mut plan = RilPlan::new(fan)?;
            if let Some(g) = a.gain {
                if !(g > 0.0 && g.is_finite()) {
                    return Err(TomoError::InvalidConfig(format!("gain must be positive, got {g}")));
                }
                plan = plan.with_gain(g);
            }
            let x = ril_forward(&y, &plan, cfg.side, cfg.pixel_spacing_mm)?;
            save_tensor(x.values(), &a.out)?;
        }
        Command::Li(a) => {
            let t = load_tensor::<f64>(&a.sino)?;
            let fan = placeholder_fan(t.rows(), t.cols())?;
            let y = Sinogram::fan(fan, t)?;
            let m = MetalTrace::new(load_mask(&a.trace)?);
            save_tensor(li_inpaint(&y, &m)?.values(), &a.out)?;
        }
        Command::Mar(a) => {
            let cfg = load_config(a.geom.as_deref())?;
            let solver = match &a.config {
                Some(p) => SolverConfig::load_json(p)?,
                None => SolverConfig::default(),
            };
            let fan = cfg.fan_geometry()?;
            let y = load_sino(&a.sino, fan)?;
            let m = MetalTrace::new(load_mask(&a.trace)?);
            let y_li = li_inpaint(&y, &m)?;
            let plan = RilPlan::new(fan)?;
            let (values, log_csv) = match a.mode {
                MarMode::Iterative => {
                    let init = match &a.init {
                        Some(p) => load_image(p, &cfg)?,
                        None => ril_forward(&y_li, &plan, cfg.side, cfg.pixel_spacing_mm)?,
                    };
                    let r = iterative_mar(&y, &m, &solver, &init)?;
                    (r.result.values().clone(), r.log_csv())
                }
                MarMode::TraceRefine => {
                    let path = a
                        .reference
                        .as_ref()
                        .ok_or_else(|| TomoError::InvalidConfig("trace-refine needs --ref".into()))?;
                    let x_ref = load_image(path, &cfg)?;
                    let r = trace_refine(&y_li, &m, &x_ref, &solver, &plan)?;
                    (r.result.values().clone(), r.log_csv())
                }
            };
            save_tensor(&values, &a.out)?;
            if let Some(p) = &a.log {
                std::fs::write(p, log_csv).map_err(|source| TomoError::Io { path: p.clone(), source })?;
            }
        }
        Command::Metrics(a) => {
            let x = square_image(load_tensor::<f64>(&a.x)?)?;
            let r = square_image(load_tensor::<f64>(&a.reference)?)?;
            let mask = a.exclude_metal.as_ref().map(|p| load_mask(p)).transpose()?;
            let report = evaluate(&x, &r, a.peak, mask.as_ref().map(|m| (m, "metal")))?;
            if a.json {
                println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            } else if report.identical {
                println!("psnr identical");
                println!("ssim {:.6}", report.ssim);
            } else {
                println!("psnr {:.4} dB", report.psnr_db);
                println!("ssim {:.6}", report.ssim);
            }
        }
        Command::Gradcheck(a) => {
            let n_det = 2 * a.side + 1;
            let n_views = 2 * a.side;
            let (report, tol) = if a.f64 {
                (gradcheck::<f64>(a.side, n_det, n_views, a.pairs, a.seed)?, GRADCHECK_TOL_F64)
            } else {
                (gradcheck::<f32>(a.side, n_det, n_views, a.pairs, a.seed)?, GRADCHECK_TOL_F32)
            };
            let rows = [
                ("dot fan projector", report.dot_fan, tol),
                ("dot parallel projector", report.dot_parallel, tol),
                ("dot ril", report.dot_ril, tol),
                ("finite difference ril (f64)", report.finite_difference, GRADCHECK_TOL_F64),
            ];
            let mut ok = true;
            for (name, err, limit) in rows {
                let pass = err <= limit;
                ok &= pass;
                println!("{} {name}: max rel err {err:.3e} (limit {limit:.0e})", if pass { "ok  " } else { "FAIL" });
            }
            if !ok {
                return Ok(ExitCode::from(4));
            }
        }
        Command::ExportPng(a) => {
            let x = square_image(load_tensor::<f64>(&a.input)?)?;
            let x = if a.hu { image_to_hu(&x, MU_WATER_PER_MM) } else { x };
            export_png(x.values(), WindowSpec::new(a.center, a.width)?, &a.out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn load_config(path: Option<&Path>) -> Result<ScanConfig> {
    match path {
        Some(p) => ScanConfig::load(p),
        None => Ok(ScanConfig::default()),
    }
}

fn load_mask(path: &Path) -> Result<BinaryMask> {
    BinaryMask::from_tensor(&load_tensor::<f64>(path)?)
}

fn load_image(path: &Path, cfg: &ScanConfig) -> Result<ImageGrid<f64>> {
    let t = load_tensor::<f64>(path)?;
    if t.dims() != (cfg.side, cfg.side) {
        return Err(TomoError::DimMismatch(format!(
            "{} is {}x{}, config expects {}x{}",
            path.display(),
            t.rows(),
            t.cols(),
            cfg.side,
            cfg.side
        )));
    }
    ImageGrid::new(t, cfg.pixel_spacing_mm)
}

fn load_sino(path: &Path, fan: FanGeometry) -> Result<Sinogram<f64>> {
    Sinogram::fan(fan, load_tensor::<f64>(path)?)
}

fn square_image(t: Tensor2D<f64>) -> Result<ImageGrid<f64>> {
    ImageGrid::new(t, 1.0)
}

/// LI only looks at values, but a sinogram carries a geometry; any valid
/// fan with the right dimensions will do.
fn placeholder_fan(rows: usize, cols: usize) -> Result<FanGeometry> {
    FanGeometry::new(1.0, rows, 1.0 / (2 * rows.max(1)) as f64, cols)
}
