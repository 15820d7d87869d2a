use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand};
use lluad_core::maintenance::MaintenanceConfig;
use lluad_core::resolver::FallbackMode;
use lluad_core::sim::bandwidth::{run_bandwidth, BandwidthConfig};
use lluad_core::sim::exposure::{exposure_curve, fit_overlap, ExposureModelParams};
use lluad_core::sim::generator::{generate, ZipfGeneratorConfig};
use lluad_core::sim::hit_ratio::{run_hit_ratio, HitRatioConfig, HitRatioSeries};
use lluad_core::sim::latency::{run_latency, LatencyTable};
use lluad_core::sim::output::{to_csv, write_bytes, Manifest};
use lluad_core::sim::trace::QueryTrace;
use lluad_core::sim::universe::{SyntheticUniverse, UniverseConfig};
use serde::{Deserialize, Serialize};

use crate::settings::{List, Settings};
use crate::{CliError, Common};

#[derive(Subcommand)]
pub enum SimCommand {
    /// Hourly list hit ratio for one or more list sizes.
    HitRatio(HitRatioArgs),
    /// Exposure rate against the collusion rate.
    Exposure(ExposureArgs),
    /// Mean lookup latency per hour.
    Latency(LatencyArgs),
    /// Hourly byte accounting.
    Bandwidth(BandwidthArgs),
}

/// Source of the replayed queries.
#[derive(Args, Clone, Debug, Default)]
pub struct TraceArgs {
    /// Replay this CSV trace; names resolve against the synthetic universe.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Distinct names in the synthetic universe.
    #[arg(long)]
    pub universe: Option<usize>,
    /// Zipf exponent.
    #[arg(long)]
    pub zipf: Option<f64>,
    #[arg(long)]
    pub clients: Option<u32>,
    /// Queries per hour.
    #[arg(long)]
    pub qph: Option<u64>,
    #[arg(long)]
    pub hours: Option<u64>,
    /// Fraction of popularity ranks permuted per day.
    #[arg(long)]
    pub churn: Option<f64>,
    #[arg(long)]
    pub aaaa_share: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceInfo {
    pub source: String,
    pub universe: usize,
    pub generator: Option<ZipfGeneratorConfig>,
    pub events: usize,
}

pub struct Workload {
    pub universe: SyntheticUniverse,
    pub trace: QueryTrace,
    pub info: TraceInfo,
}

impl TraceArgs {
    pub fn generator(&self, s: &Settings, seed: u64) -> Result<(usize, ZipfGeneratorConfig), CliError> {
        let d = ZipfGeneratorConfig::default();
        let universe = s.pick(self.universe, "universe", 100_000)?;
        let g = ZipfGeneratorConfig {
            exponent: s.pick(self.zipf, "zipf", d.exponent)?,
            clients: s.pick(self.clients, "clients", d.clients)?,
            queries_per_hour: s.pick(self.qph, "qph", d.queries_per_hour)?,
            hours: s.pick(self.hours, "hours", d.hours)?,
            churn_per_day: s.pick(self.churn, "churn", d.churn_per_day)?,
            aaaa_share: s.pick(self.aaaa_share, "aaaa_share", d.aaaa_share)?,
            seed,
            ..d
        };
        Ok((universe, g))
    }

    pub fn workload(&self, s: &Settings, seed: u64) -> Result<Workload, CliError> {
        let path = s.opt(self.trace.clone(), "trace")?;
        let (size, g) = self.generator(s, seed)?;
        let universe = SyntheticUniverse::new(UniverseConfig { size, seed, ..UniverseConfig::default() });
        let (trace, source, generator) = match path {
            Some(p) => {
                let file = std::fs::File::open(&p).map_err(|source| CliError::Io { path: p.clone(), source })?;
                let trace = QueryTrace::read_csv(std::io::BufReader::new(file))?;
                let st = &trace.stats;
                log::info!(
                    "{}: {} events, {} malformed, {} unsupported",
                    p.display(),
                    trace.len(),
                    st.malformed,
                    st.unsupported
                );
                (trace, p.display().to_string(), None)
            }
            None => (generate(&g, &universe)?, "zipf".to_string(), Some(g)),
        };
        if trace.is_empty() {
            return Err(CliError::Config("the trace has no events".into()));
        }
        let info = TraceInfo { source, universe: size, generator, events: trace.len() };
        Ok(Workload { universe, trace, info })
    }
}

/// Ranking parameters shared by replaying experiments.
#[derive(Args, Clone, Debug, Default)]
pub struct MaintenanceArgs {
    /// Seconds per voting round.
    #[arg(long)]
    pub t_refresh: Option<u64>,
    /// Weight of the latest round in the decayed score.
    #[arg(long)]
    pub weight_a: Option<f64>,
    #[arg(long)]
    pub voting_rate: Option<f64>,
    /// Votes per client and round.
    #[arg(long)]
    pub max_votes: Option<u32>,
    /// Floor on re-query intervals, seconds.
    #[arg(long)]
    pub min_ttl: Option<u64>,
    #[arg(long)]
    pub fast_start_rounds: Option<u64>,
}

impl MaintenanceArgs {
    pub fn config(&self, s: &Settings, n_popular: usize, seed: u64) -> Result<MaintenanceConfig, CliError> {
        let d = MaintenanceConfig::default();
        Ok(MaintenanceConfig {
            n_popular,
            t_refresh_secs: s.pick(self.t_refresh, "t_refresh", d.t_refresh_secs)?,
            weight_a: s.pick(self.weight_a, "weight_a", d.weight_a)?,
            voting_rate: s.pick(self.voting_rate, "voting_rate", d.voting_rate)?,
            max_votes_per_round: s.pick(self.max_votes, "max_votes", d.max_votes_per_round)?,
            min_ttl_secs: s.pick(self.min_ttl, "min_ttl", d.min_ttl_secs)?,
            fast_start_rounds: s.pick(self.fast_start_rounds, "fast_start_rounds", d.fast_start_rounds)?,
            seed,
            ..d
        })
    }
}

#[derive(Args)]
pub struct HitRatioArgs {
    #[command(flatten)]
    pub trace: TraceArgs,
    #[command(flatten)]
    pub maintenance: MaintenanceArgs,
    /// Comma-separated list sizes.
    #[arg(long)]
    pub n_popular: Option<List<usize>>,
    /// Count every query as a vote during the first rounds.
    #[arg(long)]
    pub fast_start: Option<bool>,
    /// Only this many clients ever vote.
    #[arg(long)]
    pub voter_cap: Option<usize>,
    /// Stop all votes from this hour on.
    #[arg(long)]
    pub stop_votes_after: Option<u64>,
    /// Drop repeats of a name by the same client within 60 s.
    #[arg(long)]
    pub browser_cache: Option<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HitRatioRow {
    pub n_popular: usize,
    pub hour: u64,
    pub queries: u64,
    pub hits: u64,
    pub hit_ratio: f64,
    pub votes: u64,
    pub list_len: usize,
}

pub fn hit_ratio_rows(series: &HitRatioSeries) -> Vec<HitRatioRow> {
    series
        .hours
        .iter()
        .map(|h| HitRatioRow {
            n_popular: series.n_popular,
            hour: h.hour,
            queries: h.queries,
            hits: h.hits,
            hit_ratio: h.hit_ratio(),
            votes: h.votes,
            list_len: h.list_len,
        })
        .collect()
}

#[derive(Args)]
pub struct ExposureArgs {
    /// Share of queries leaving through the fallback.
    #[arg(long)]
    pub miss: Option<f64>,
    /// Share of queries cast as votes.
    #[arg(long)]
    pub vote: Option<f64>,
    /// Share of votes whose query also missed.
    #[arg(long, conflicts_with = "fit_target")]
    pub overlap: Option<f64>,
    /// Fit the overlap so that full collusion exposes this share.
    #[arg(long)]
    pub fit_target: Option<f64>,
    /// Fallback transports to compare, comma-separated.
    #[arg(long)]
    pub modes: Option<List<FallbackMode>>,
    /// Mix hops per vote.
    #[arg(long)]
    pub mix_hops: Option<u32>,
    /// Collusion-rate grid steps.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExposureRow {
    pub config: String,
    pub collusion: f64,
    pub exposure: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExposureSettings {
    pub miss_fraction: f64,
    pub vote_fraction: f64,
    pub overlap: f64,
    pub mix_hops: u32,
    pub modes: Vec<FallbackMode>,
    pub steps: usize,
}

impl ExposureSettings {
    pub fn rows(&self) -> Result<Vec<ExposureRow>, CliError> {
        let mut rows = Vec::new();
        let mut push = |name: String, p: ExposureModelParams| -> Result<(), CliError> {
            for (c, e) in exposure_curve(&p, self.steps)? {
                rows.push(ExposureRow { config: name.clone(), collusion: c, exposure: e });
            }
            Ok(())
        };
        for &mode in &self.modes {
            let relays = mode.relay_count();
            let alone = ExposureModelParams {
                miss_fraction: 1.0,
                vote_fraction: 0.0,
                overlap: 0.0,
                fallback_relays: relays,
                mix_hops: self.mix_hops,
                collusion: 0.0,
            };
            push(mode.name().to_string(), alone)?;
            let with_list = ExposureModelParams {
                miss_fraction: self.miss_fraction,
                vote_fraction: self.vote_fraction,
                overlap: self.overlap,
                ..alone
            };
            push(format!("lluad+{}", mode.name()), with_list)?;
        }
        Ok(rows)
    }
}

#[derive(Args)]
pub struct LatencyArgs {
    /// Hit ratios to evaluate, one per hour.
    #[arg(long, conflicts_with = "series")]
    pub hit_ratio: Option<List<f64>>,
    /// CSV with `hour` and `hit_ratio` columns, as written by `sim hit-ratio`.
    #[arg(long)]
    pub series: Option<PathBuf>,
    /// Rows of the series to use when it holds several list sizes.
    #[arg(long)]
    pub n_popular: Option<usize>,
    #[arg(long)]
    pub modes: Option<List<FallbackMode>>,
    /// Lookups sampled per hour.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub local_hit_ms: Option<f64>,
    #[arg(long)]
    pub local_miss_ms: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatencyRow {
    pub mode: String,
    pub hour: u64,
    pub hit_ratio: f64,
    pub mean_ms: f64,
    pub sampled_ms: f64,
    pub fallback_only_ms: f64,
}

pub fn latency_rows(
    hit_ratios: &[f64],
    table: &LatencyTable,
    modes: &[FallbackMode],
    samples: usize,
    seed: u64,
) -> Vec<LatencyRow> {
    let mut rows = Vec::new();
    for (i, &mode) in modes.iter().enumerate() {
        for p in run_latency(hit_ratios, table, mode, samples, seed.wrapping_add(i as u64)) {
            rows.push(LatencyRow {
                mode: mode.name().to_string(),
                hour: p.hour,
                hit_ratio: p.hit_ratio,
                mean_ms: p.mean_ms,
                sampled_ms: p.sampled_ms,
                fallback_only_ms: table.fallback(mode),
            });
        }
    }
    rows
}

#[derive(Args)]
pub struct BandwidthArgs {
    #[command(flatten)]
    pub trace: TraceArgs,
    #[command(flatten)]
    pub maintenance: MaintenanceArgs,
    #[arg(long)]
    pub n_popular: Option<usize>,
    /// Fallback transport priced for misses.
    #[arg(long)]
    pub mode: Option<FallbackMode>,
    /// Online clients; defaults to those in the trace.
    #[arg(long)]
    pub online: Option<usize>,
    #[arg(long)]
    pub shufflers: Option<usize>,
    /// Vote packets per client and round.
    #[arg(long)]
    pub quota: Option<u16>,
    #[arg(long)]
    pub n_shuffle: Option<u8>,
    /// Also price full-tuple mirroring of the list.
    #[arg(long)]
    pub baseline: Option<bool>,
}

pub const DEFAULT_MODES: [FallbackMode; 3] =
    [FallbackMode::Doh, FallbackMode::AnonDnscryptRotating, FallbackMode::Dohot];

pub fn run(command: SimCommand, common: &Common) -> Result<(), CliError> {
    let s = Settings::load(common.config.as_deref())?;
    let seed = s.pick(common.seed, "seed", 0)?;
    match command {
        SimCommand::HitRatio(a) => {
            let sizes = s.pick(a.n_popular.clone(), "n_popular", List(vec![MaintenanceConfig::default().n_popular]))?.0;
            let template = HitRatioConfig {
                maintenance: a.maintenance.config(&s, 0, seed)?,
                fast_start: s.pick(a.fast_start, "fast_start", true)?,
                voter_cap: s.opt(a.voter_cap, "voter_cap")?,
                stop_votes_after_hours: s.opt(a.stop_votes_after, "stop_votes_after")?,
                browser_cache: s.pick(a.browser_cache, "browser_cache", false)?,
                seed,
            };
            let mut w = a.trace.workload(&s, seed)?;
            s.finish()?;
            let mut rows = Vec::new();
            for &n in &sizes {
                let mut config = template.clone();
                config.maintenance.n_popular = n;
                let series = run_hit_ratio(&w.trace, &config, &mut w.universe)?;
                rows.extend(hit_ratio_rows(&series));
            }
            #[derive(Serialize)]
            struct Run<'a> {
                n_popular: &'a [usize],
                replay: &'a HitRatioConfig,
                trace: &'a TraceInfo,
            }
            emit(common, "hit_ratio", &rows, Run { n_popular: &sizes, replay: &template, trace: &w.info }, seed)
        }
        SimCommand::Exposure(a) => {
            let miss_fraction = s.pick(a.miss, "miss", 0.056)?;
            let vote_fraction = s.pick(a.vote, "vote", 0.157)?;
            let overlap = match s.opt(a.fit_target, "fit_target")? {
                Some(t) => fit_overlap(miss_fraction, vote_fraction, t),
                None => s.pick(a.overlap, "overlap", 0.0)?,
            };
            let settings = ExposureSettings {
                miss_fraction,
                vote_fraction,
                overlap,
                mix_hops: s.pick(a.mix_hops, "mix_hops", u32::from(lluad_core::mixnet::DEFAULT_N_SHUFFLE))?,
                modes: s.pick(a.modes, "modes", List(DEFAULT_MODES.to_vec()))?.0,
                steps: s.pick(a.steps, "steps", 20)?,
            };
            s.finish()?;
            let rows = settings.rows()?;
            emit(common, "exposure", &rows, settings, seed)
        }
        SimCommand::Latency(a) => {
            let d = LatencyTable::default();
            let table = LatencyTable {
                local_hit_ms: s.pick(a.local_hit_ms, "local_hit_ms", d.local_hit_ms)?,
                local_miss_ms: s.pick(a.local_miss_ms, "local_miss_ms", d.local_miss_ms)?,
                ..d
            };
            let modes = s.pick(a.modes, "modes", List(DEFAULT_MODES.to_vec()))?.0;
            let samples = s.pick(a.samples, "samples", 1000)?;
            let n_popular = s.opt(a.n_popular, "n_popular")?;
            let hit_ratios = match (s.opt(a.hit_ratio, "hit_ratio")?, s.opt(a.series, "series")?) {
                (Some(List(h)), _) => h,
                (None, Some(path)) => read_series(&path, n_popular)?,
                (None, None) => return Err(CliError::Config("give --hit-ratio or --series".into())),
            };
            s.finish()?;
            let rows = latency_rows(&hit_ratios, &table, &modes, samples, seed);
            #[derive(Serialize)]
            struct Run<'a> {
                table: &'a LatencyTable,
                modes: &'a [FallbackMode],
                samples: usize,
                hit_ratios: &'a [f64],
            }
            emit(common, "latency", &rows, Run { table: &table, modes: &modes, samples, hit_ratios: &hit_ratios }, seed)
        }
        SimCommand::Bandwidth(a) => {
            let d = BandwidthConfig::default();
            let n = s.pick(a.n_popular, "n_popular", MaintenanceConfig::default().n_popular)?;
            let config = BandwidthConfig {
                replay: HitRatioConfig {
                    maintenance: a.maintenance.config(&s, n, seed)?,
                    seed,
                    ..HitRatioConfig::default()
                },
                clients: s.opt(a.online, "online")?,
                shufflers: s.pick(a.shufflers, "shufflers", d.shufflers)?,
                quota: s.pick(a.quota, "quota", d.quota)?,
                n_shuffle: s.pick(a.n_shuffle, "n_shuffle", d.n_shuffle)?,
                mode: s.pick(a.mode, "mode", d.mode)?,
                baseline: s.pick(a.baseline, "baseline", false)?,
                ..d
            };
            let mut w = a.trace.workload(&s, seed)?;
            s.finish()?;
            let report = run_bandwidth(&w.trace, &config, &mut w.universe)?;
            #[derive(Serialize)]
            struct Run<'a> {
                bandwidth: &'a BandwidthConfig,
                clients: usize,
                trace: &'a TraceInfo,
            }
            emit(
                common,
                "bandwidth",
                &report.hours,
                Run { bandwidth: &config, clients: report.clients, trace: &w.info },
                seed,
            )
        }
    }
}

/// Reads the `hit_ratio` column in hour order.
pub fn read_series(path: &Path, n_popular: Option<usize>) -> Result<Vec<f64>, CliError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows: Vec<HitRatioRow> = reader.deserialize().collect::<Result<_, _>>()?;
    let sizes: std::collections::BTreeSet<usize> = rows.iter().map(|r| r.n_popular).collect();
    let pick = match n_popular {
        Some(n) => n,
        None if sizes.len() == 1 => *sizes.iter().next().expect("one size"),
        None => {
            return Err(CliError::Config(format!(
                "{} holds several list sizes; pick one with --n-popular",
                path.display()
            )))
        }
    };
    rows.retain(|r| r.n_popular == pick);
    if rows.is_empty() {
        return Err(CliError::Config(format!("no rows for n_popular = {pick}")));
    }
    rows.sort_by_key(|r| r.hour);
    Ok(rows.into_iter().map(|r| r.hit_ratio).collect())
}

/// Writes `<out>/<name>.csv` and its manifest, or the CSV to stdout.
pub fn emit<R: Serialize, C: Serialize>(
    common: &Common,
    name: &str,
    rows: &[R],
    config: C,
    seed: u64,
) -> Result<(), CliError> {
    let csv = to_csv(rows)?;
    match &common.out {
        Some(dir) => {
            let file = format!("{name}.csv");
            write_bytes(&dir.join(&file), &csv)?;
            let mut manifest = Manifest::new(name, seed, config);
            manifest.outputs.push(file);
            manifest.write(&dir.join(format!("{name}.manifest.json")))?;
            log::info!("wrote {} rows to {}", rows.len(), dir.join(format!("{name}.csv")).display());
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(&csv)
                .and_then(|_| out.flush())
                .map_err(|source| CliError::Io { path: "<stdout>".into(), source })?;
        }
    }
    Ok(())
}

pub fn trace_gen(a: TraceArgs, common: &Common) -> Result<(), CliError> {
    let s = Settings::load(common.config.as_deref())?;
    let seed = s.pick(common.seed, "seed", 0)?;
    if a.trace.is_some() {
        return Err(CliError::Config("--trace is not an input of trace gen".into()));
    }
    let (size, g) = a.generator(&s, seed)?;
    s.finish()?;
    let universe = SyntheticUniverse::new(UniverseConfig { size, seed, ..UniverseConfig::default() });
    let trace = generate(&g, &universe)?;
    match &common.out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent).map_err(|source| CliError::Io { path: parent.into(), source })?;
            }
            let file = std::fs::File::create(path).map_err(|source| CliError::Io { path: path.clone(), source })?;
            trace.write_csv(std::io::BufWriter::new(file))?;
            log::info!("wrote {} events to {}", trace.len(), path.display());
        }
        None => trace.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}
