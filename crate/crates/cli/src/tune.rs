//! Tile-size tuning of the fused GEMM pipelines in virtual time.

use oneside::{
    ag_gemm, gemm_rs, tune, ComputeModel, ConfigSpace, Opts, ProblemShape, TuneOptions, TuneReport,
    World,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scenario::{Kind, Scenario};
use crate::Failure;

const AXES: [&str; 2] = ["tile_m", "tile_n"];

pub fn run(world: &World, sc: &Scenario) -> Result<TuneReport, Failure> {
    if !matches!(sc.kind, Kind::AgGemm | Kind::GemmRs) {
        return Err(Failure::config("tune drives ag-gemm or gemm-rs scenarios"));
    }
    let cfg = sc.tune.clone().unwrap_or(crate::scenario::TuneCfg {
        axes: Vec::new(),
        iterations: 3,
    });
    if let Some(a) = cfg.axes.iter().find(|a| !AXES.contains(&a.name.as_str())) {
        return Err(Failure::config(format!(
            "unknown tuning axis `{}` (tile_m, tile_n)",
            a.name
        )));
    }
    let space = ConfigSpace { axes: cfg.axes };
    let s = sc.shape()?;
    let w = sc.world_size();
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed());
    let mut mat = |len: usize| -> Vec<i64> { (0..len).map(|_| rng.gen_range(-16..16)).collect() };
    let b = mat(s.k * s.n);
    let a: Vec<Vec<i64>> = match sc.kind {
        Kind::AgGemm => mat(s.m * s.k)
            .chunks(s.m / w.max(1) * s.k)
            .map(<[i64]>::to_vec)
            .collect(),
        _ => (0..w).map(|_| mat(s.m * s.k)).collect(),
    };
    let schedules = sc.schedules()?;
    let mode = sc.mode();
    let opts = TuneOptions {
        iterations: cfg.iterations,
        mode,
    };
    let report = tune(world, &space, &opts, |w, c| {
        let shape = ProblemShape::new(s.m, s.n, s.k, 8).with_tiles(
            space.get(c, "tile_m").map_or(s.tile_m, |v| v as usize),
            space.get(c, "tile_n").map_or(s.tile_n, |v| v as usize),
        );
        let run_opts = Opts::default().with_mode(mode);
        let report = if sc.kind == Kind::AgGemm {
            ag_gemm(
                w,
                &a,
                &b,
                &shape,
                &schedules,
                &ComputeModel::default(),
                &run_opts,
            )?
            .report
        } else {
            gemm_rs(
                w,
                &a,
                &b,
                &shape,
                &schedules,
                &ComputeModel::default(),
                &run_opts,
            )?
            .report
        };
        Ok((0..w.world_size()).map(|r| report.rank_end_us(r)).collect())
    })?;
    Ok(report)
}
