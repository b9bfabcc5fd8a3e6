use std::io::Write;

use anyhow::Result;
use icuau_core::analytics::{association_table, labeled_frames, AssociationOptions, Attribution};

use crate::config::{existing, required, RunConfig};
use crate::pipeline::{load_reports, open_store, output};
use crate::{AnalyzeArgs, AttributionArg, Format};

pub fn run(args: AnalyzeArgs) -> Result<()> {
    let mut cfg = RunConfig::load(args.config.as_deref())?;
    for (flag, slot) in [
        (args.annotations, &mut cfg.paths.annotations),
        (args.reports, &mut cfg.paths.reports),
        (args.manifest, &mut cfg.paths.manifest),
    ] {
        if flag.is_some() {
            *slot = flag;
        }
    }
    let journal = required(&cfg.paths.annotations, "annotations")?;
    let store = open_store(required(&cfg.paths.manifest, "manifest")?, existing(journal)?)?;
    let reports = load_reports(required(&cfg.paths.reports, "reports")?)?;
    let attribution = match args.attribution {
        Some(AttributionArg::PerReport) => Attribution::PerReport,
        Some(AttributionArg::Nearest) => Attribution::Nearest,
        None => cfg.data.attribution,
    };
    let opts = AssociationOptions {
        attribution,
        ..AssociationOptions::default()
    };
    let table = association_table(&labeled_frames(&store)?, &reports, &opts)?;
    let text = match args.format {
        Format::Json => table.to_json()? + "\n",
        Format::Csv => table.to_csv()?,
    };
    let mut out = output(args.out.as_ref())?;
    out.write_all(text.as_bytes())?;
    out.flush()?;
    Ok(())
}
