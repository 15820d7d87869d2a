use clap::{Args, ValueEnum};
use lluad_core::list::SerializeOptions;
use lluad_core::maintenance::MaintenanceConfig;
use lluad_core::resolver::FallbackMode;
use lluad_core::sim::bandwidth::{run_bandwidth, BandwidthConfig};
use lluad_core::sim::generator::{generate, ZipfGeneratorConfig};
use lluad_core::sim::hit_ratio::{run_hit_ratio, HitRatioConfig, HitRatioSeries};
use lluad_core::sim::latency::LatencyTable;
use lluad_core::sim::output::{write_csv, Manifest};
use lluad_core::sim::universe::{top_list, SyntheticUniverse, UniverseConfig};
use serde::Serialize;

use crate::sim::{latency_rows, ExposureSettings, DEFAULT_MODES};
use crate::{CliError, Common};

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Seconds; for smoke tests.
    Quick,
    /// Minutes; a 10^5-name universe over ten days.
    Full,
}

#[derive(Args)]
pub struct PlotArgs {
    #[arg(long, value_enum, default_value_t = Scale::Quick)]
    pub scale: Scale,
}

#[derive(Clone, Debug, Serialize)]
struct Preset {
    universe: usize,
    generator: ZipfGeneratorConfig,
    sizes: Vec<usize>,
    voter_caps: Vec<usize>,
    /// Votes stop here in the frozen variant.
    stop_votes_after: u64,
    bandwidth_hours: u64,
    online_clients: usize,
}

impl Preset {
    fn new(scale: Scale, seed: u64) -> Self {
        let churn = 0.002;
        match scale {
            Scale::Quick => Self {
                universe: 5000,
                generator: ZipfGeneratorConfig {
                    clients: 200,
                    queries_per_hour: 2000,
                    hours: 48,
                    churn_per_day: churn,
                    seed,
                    ..Default::default()
                },
                sizes: vec![50, 200, 1000, 2500],
                voter_caps: vec![1, 5, 20],
                stop_votes_after: 18,
                bandwidth_hours: 6,
                online_clients: 200,
            },
            Scale::Full => Self {
                universe: 100_000,
                generator: ZipfGeneratorConfig {
                    clients: 4000,
                    queries_per_hour: 20_000,
                    hours: 240,
                    churn_per_day: churn,
                    seed,
                    ..Default::default()
                },
                sizes: vec![100, 1000, 10_000, 25_000],
                voter_caps: vec![1, 10, 50, 500],
                stop_votes_after: 18,
                bandwidth_hours: 24,
                online_clients: 10_000,
            },
        }
    }
}

#[derive(Serialize)]
struct Fig3Row {
    variant: &'static str,
    n_popular: usize,
    hour: u64,
    hit_ratio: f64,
}

#[derive(Serialize)]
struct Fig4Row {
    voters: usize,
    fast_start: bool,
    day: u64,
    hit_ratio: f64,
    list_len: f64,
}

#[derive(Serialize)]
struct Fig7Row {
    n_popular: usize,
    records: usize,
    plain_bytes: usize,
    compressed_bytes: usize,
    flattened_bytes: usize,
    flattened_compressed_bytes: usize,
}

#[derive(Serialize)]
struct Fig8Row {
    config: String,
    hour: u64,
    total_bytes: f64,
    broadcast_bytes: f64,
    round_bytes: f64,
    fallback_bytes: f64,
}

#[derive(Serialize)]
struct Fig9Row {
    n_popular: usize,
    clients: usize,
    sent_bytes_per_hour: f64,
    received_bytes_per_hour: f64,
    upstream_bytes_per_hour: f64,
    mbit_per_s: f64,
}

fn daily(series: &HitRatioSeries) -> Vec<(u64, f64, f64)> {
    let days = (series.hours.len() as u64).div_ceil(24);
    (0..days)
        .map(|d| {
            let hours: Vec<_> = series.hours.iter().filter(|h| h.hour / 24 == d).collect();
            let len = hours.iter().map(|h| h.list_len as f64).sum::<f64>() / hours.len().max(1) as f64;
            (d, series.mean_hit_ratio(d * 24, d * 24 + 24), len)
        })
        .collect()
}

pub fn run(a: PlotArgs, common: &Common) -> Result<(), CliError> {
    let seed = common.seed.unwrap_or(0);
    let dir = common.out.clone().ok_or_else(|| CliError::Config("--out DIR is required".into()))?;
    let p = Preset::new(a.scale, seed);
    let mut universe = SyntheticUniverse::new(UniverseConfig { size: p.universe, seed, ..UniverseConfig::default() });
    let trace = generate(&p.generator, &universe)?;
    let largest = *p.sizes.last().expect("sizes");
    let replay = |n: usize| HitRatioConfig {
        maintenance: MaintenanceConfig { n_popular: n, seed, ..MaintenanceConfig::default() },
        seed,
        ..HitRatioConfig::default()
    };
    let mut outputs = Vec::new();
    let steady_from = p.generator.hours / 2;

    log::info!("hit ratios");
    let mut fig3 = Vec::new();
    let mut live_largest = None;
    for &n in &p.sizes {
        let live = run_hit_ratio(&trace, &replay(n), &mut universe)?;
        let frozen = run_hit_ratio(
            &trace,
            &HitRatioConfig { stop_votes_after_hours: Some(p.stop_votes_after), ..replay(n) },
            &mut universe,
        )?;
        for (variant, s) in [("live", &live), ("frozen", &frozen)] {
            fig3.extend(s.hours.iter().map(|h| Fig3Row {
                variant,
                n_popular: n,
                hour: h.hour,
                hit_ratio: h.hit_ratio(),
            }));
        }
        if n == largest {
            live_largest = Some(live);
        }
    }
    let live = live_largest.expect("largest size ran");
    write_csv(&dir.join("fig3_hit_ratio.csv"), &fig3)?;
    outputs.push("fig3_hit_ratio.csv");

    log::info!("low participation");
    let mut fig4 = Vec::new();
    for &voters in &p.voter_caps {
        for fast_start in [true, false] {
            let s = run_hit_ratio(
                &trace,
                &HitRatioConfig { voter_cap: Some(voters), fast_start, ..replay(largest) },
                &mut universe,
            )?;
            fig4.extend(daily(&s).into_iter().map(|(day, hit_ratio, list_len)| Fig4Row {
                voters,
                fast_start,
                day,
                hit_ratio,
                list_len,
            }));
        }
    }
    write_csv(&dir.join("fig4_low_participation.csv"), &fig4)?;
    outputs.push("fig4_low_participation.csv");

    log::info!("exposure");
    let (miss_fraction, vote_fraction, overlap) = live.exposure_inputs(steady_from, p.generator.hours);
    let exposure = ExposureSettings {
        miss_fraction,
        vote_fraction,
        overlap,
        mix_hops: u32::from(lluad_core::mixnet::DEFAULT_N_SHUFFLE),
        modes: DEFAULT_MODES.to_vec(),
        steps: 20,
    };
    write_csv(&dir.join("fig5_exposure.csv"), &exposure.rows()?)?;
    outputs.push("fig5_exposure.csv");

    log::info!("latency");
    let ratios: Vec<f64> = live.hours.iter().map(|h| h.hit_ratio()).collect();
    let mut modes = vec![FallbackMode::Plain];
    modes.extend(DEFAULT_MODES);
    write_csv(&dir.join("fig6_latency.csv"), &latency_rows(&ratios, &LatencyTable::default(), &modes, 1000, seed))?;
    outputs.push("fig6_latency.csv");

    log::info!("list sizes");
    let mut fig7 = Vec::new();
    for &n in &p.sizes {
        let list = top_list(&mut universe, n, seed)?;
        let size = |compress, flatten_cnames| list.serialize_with(SerializeOptions { compress, flatten_cnames }).len();
        fig7.push(Fig7Row {
            n_popular: n,
            records: list.len(),
            plain_bytes: size(false, false),
            compressed_bytes: size(true, false),
            flattened_bytes: size(false, true),
            flattened_compressed_bytes: size(true, true),
        });
    }
    write_csv(&dir.join("fig7_list_size.csv"), &fig7)?;
    outputs.push("fig7_list_size.csv");

    log::info!("bandwidth");
    let base = BandwidthConfig {
        replay: replay(largest),
        mode: FallbackMode::AnonDnscryptRotating,
        hours: Some(p.bandwidth_hours),
        ..BandwidthConfig::default()
    };
    let mut fig8 = Vec::new();
    for (label, min_ttl) in [("lluad-min-ttl-60", 60), ("lluad-min-ttl-300", 300)] {
        let mut config = base.clone();
        config.replay.maintenance.min_ttl_secs = min_ttl;
        let report = run_bandwidth(&trace, &config, &mut universe)?;
        fig8.extend(report.hours.iter().map(|h| Fig8Row {
            config: label.to_string(),
            hour: h.hour,
            total_bytes: h.client_total_bytes,
            broadcast_bytes: h.client_broadcast_bytes as f64,
            round_bytes: h.client_round_bytes as f64,
            fallback_bytes: h.client_fallback_bytes,
        }));
    }
    let per_client = p.generator.queries_per_hour as f64 / f64::from(p.generator.clients);
    for mode in [
        FallbackMode::Plain,
        FallbackMode::Doh,
        FallbackMode::DnscryptRotating,
        FallbackMode::AnonDnscryptRotating,
        FallbackMode::Dohot,
    ] {
        let cost = base.fallback_bytes.get(&mode).copied().unwrap_or(0) as f64 * per_client;
        for hour in 0..p.bandwidth_hours {
            fig8.push(Fig8Row {
                config: mode.name().to_string(),
                hour,
                total_bytes: cost,
                broadcast_bytes: 0.0,
                round_bytes: 0.0,
                fallback_bytes: cost,
            });
        }
    }
    write_csv(&dir.join("fig8_client_bandwidth.csv"), &fig8)?;
    outputs.push("fig8_client_bandwidth.csv");

    let mut fig9 = Vec::new();
    for &n in &p.sizes {
        let config = BandwidthConfig { replay: replay(n), clients: Some(p.online_clients), ..base.clone() };
        let report = run_bandwidth(&trace, &config, &mut universe)?;
        let hours = report.hours.len().max(1) as f64;
        let sent = report.hours.iter().map(|h| h.server_sent_bytes).sum::<f64>() / hours;
        let received = report.hours.iter().map(|h| h.server_received_bytes).sum::<f64>() / hours;
        let upstream = report.hours.iter().map(|h| h.server_upstream_bytes as f64).sum::<f64>() / hours;
        fig9.push(Fig9Row {
            n_popular: n,
            clients: p.online_clients,
            sent_bytes_per_hour: sent,
            received_bytes_per_hour: received,
            upstream_bytes_per_hour: upstream,
            mbit_per_s: (sent + received + upstream) * 8.0 / 3600.0 / 1e6,
        });
    }
    write_csv(&dir.join("fig9_server_bandwidth.csv"), &fig9)?;
    outputs.push("fig9_server_bandwidth.csv");

    #[derive(Serialize)]
    struct Run<'a> {
        scale: Scale,
        preset: &'a Preset,
        exposure: &'a ExposureSettings,
        latency: LatencyTable,
    }
    let mut manifest = Manifest::new(
        "plotdata",
        seed,
        Run { scale: a.scale, preset: &p, exposure: &exposure, latency: LatencyTable::default() },
    );
    manifest.outputs = outputs.into_iter().map(String::from).collect();
    manifest.write(&dir.join("plotdata.manifest.json"))?;
    log::info!("wrote {} files to {}", manifest.outputs.len(), dir.display());
    Ok(())
}
