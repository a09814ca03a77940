use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;
use vibeseg_core::schema::LabelSchema;

use crate::{Cli, CliError, CliResult, Command};

#[derive(Serialize)]
struct CatalogRef<'a> {
    name: &'a str,
    version: &'a str,
}

#[derive(Serialize)]
struct Resolved<'a> {
    seed: u64,
    threads: usize,
    config_file: Option<String>,
    #[serde(flatten)]
    args: &'a Command,
}

#[derive(Serialize)]
struct Envelope<'a, R> {
    tool: &'static str,
    version: &'static str,
    catalog: Option<CatalogRef<'a>>,
    config: Resolved<'a>,
    result: &'a R,
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes a JSON report carrying tool version, catalog and resolved config.
pub fn write_report<R: Serialize>(path: &Path, cli: &Cli, schema: Option<&LabelSchema>, result: &R) -> CliResult<()> {
    let env = Envelope {
        tool: "vibeseg",
        version: vibeseg_core::VERSION,
        catalog: schema.map(|s| CatalogRef { name: &s.name, version: &s.version }),
        config: Resolved {
            seed: cli.seed,
            threads: cli.threads,
            config_file: cli.config.as_ref().map(|p| p.display().to_string()),
            args: &cli.command,
        },
        result,
    };
    let w = create(path)?;
    serde_json::to_writer_pretty(w, &env)
        .map_err(|e| CliError::Output { what: path.display().to_string(), source: Box::new(e) })
}

pub fn csv_writer(path: &Path) -> CliResult<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

pub fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Output { what: path.display().to_string(), source: Box::new(e) }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}
