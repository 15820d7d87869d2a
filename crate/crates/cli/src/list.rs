use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;

use clap::{Args, Subcommand};
use lluad_core::list::{peek_header, AnswerSlot, ListNode, PopularityList, SerializeOptions};
use lluad_core::maintenance::MaintenanceConfig;
use lluad_core::sim::output::write_bytes;
use lluad_core::sim::universe::{top_list, SyntheticUniverse, UniverseConfig};

use crate::settings::Settings;
use crate::{CliError, Common};

#[derive(Subcommand)]
pub enum ListCommand {
    /// Print a serialized list as a tree with a pool summary.
    Inspect(InspectArgs),
    /// Build the list of the top names of a synthetic universe.
    Build(BuildArgs),
}

#[derive(Args)]
pub struct InspectArgs {
    pub file: PathBuf,
    /// Stop printing the tree after this many nodes.
    #[arg(long, default_value_t = 200)]
    pub max_nodes: usize,
}

#[derive(Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub universe: Option<usize>,
    #[arg(long)]
    pub n_popular: Option<usize>,
    #[arg(long)]
    pub compress: Option<bool>,
    /// Collapse CNAME chains.
    #[arg(long)]
    pub flatten: Option<bool>,
}

pub fn run(command: ListCommand, common: &Common) -> Result<(), CliError> {
    match command {
        ListCommand::Inspect(a) => {
            let bytes = std::fs::read(&a.file).map_err(|source| CliError::Io { path: a.file.clone(), source })?;
            let header = peek_header(&bytes)?;
            let list = PopularityList::deserialize(&bytes)?;
            let mut out = String::new();
            let _ = writeln!(
                out,
                "version {} | {} bytes | compressed {} | flattened {} | {} records | {} pool entries",
                header.version,
                bytes.len(),
                header.compressed,
                header.flattened,
                header.record_count,
                header.lb_entry_count
            );
            let mut budget = a.max_nodes;
            for root in list.roots() {
                print_node(&mut out, root, 0, &mut budget);
            }
            if budget == 0 && list.node_count() > a.max_nodes {
                let _ = writeln!(out, "... {} more nodes", list.node_count() - a.max_nodes);
            }
            let pool = list.pool();
            let answers: usize = pool.groups().iter().map(|g| g.answers.len()).sum();
            let _ = writeln!(out, "pool: {} groups, {answers} answers, {} bytes", pool.len(), pool.byte_len());
            for g in pool.groups().iter().take(10) {
                let _ = writeln!(out, "  {} -> {} of {} answers", g.key, g.current_answer(), g.answers.len());
            }
            std::io::stdout()
                .lock()
                .write_all(out.as_bytes())
                .map_err(|source| CliError::Io { path: "<stdout>".into(), source })
        }
        ListCommand::Build(a) => {
            let s = Settings::load(common.config.as_deref())?;
            let seed = s.pick(common.seed, "seed", 0)?;
            let size = s.pick(a.universe, "universe", 100_000)?;
            let n = s.pick(a.n_popular, "n_popular", MaintenanceConfig::default().n_popular)?;
            let opts = SerializeOptions {
                compress: s.pick(a.compress, "compress", true)?,
                flatten_cnames: s.pick(a.flatten, "flatten", false)?,
            };
            s.finish()?;
            let out = common.out.clone().ok_or_else(|| CliError::Config("--out FILE is required".into()))?;
            let mut universe = SyntheticUniverse::new(UniverseConfig { size, seed, ..UniverseConfig::default() });
            let list = top_list(&mut universe, n, seed)?;
            let bytes = list.serialize_with(opts);
            write_bytes(&out, &bytes)?;
            log::info!("wrote {} records ({} bytes) to {}", list.len(), bytes.len(), out.display());
            Ok(())
        }
    }
}

fn print_node(out: &mut String, node: &ListNode, depth: usize, budget: &mut usize) {
    if *budget == 0 {
        return;
    }
    *budget -= 1;
    let answers: Vec<String> = node
        .answers()
        .iter()
        .map(|a| match a {
            AnswerSlot::Inline(x) => format!("{} {x}", x.rtype()),
            AnswerSlot::PoolPointer(t) => format!("{t} -> pool"),
            AnswerSlot::CnamePointer(n) => format!("CNAME {n}"),
        })
        .collect();
    let labels: Vec<&str> = node.labels().iter().rev().map(String::as_str).collect();
    let labels = labels.join(".");
    if answers.is_empty() {
        let _ = writeln!(out, "{:indent$}{labels}", "", indent = depth * 2);
    } else {
        let _ = writeln!(out, "{:indent$}{labels}  [{}]", "", answers.join(", "), indent = depth * 2);
    }
    for child in node.children() {
        print_node(out, child, depth + 1, budget);
    }
}
