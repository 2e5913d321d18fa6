mod args;
mod commands;
mod error;
mod manifest;

use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command, ReplayArgs};
use commands::Run;
use error::CliError;
use manifest::{sha256_hex, RunManifest, MANIFEST_FILE};

fn main() {
    let code = match Cli::try_parse() {
        Ok(cli) => match execute(cli) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: {e}");
                e.exit_code()
            }
        },
        Err(e) => {
            let _ = e.print();
            match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            }
        }
    };
    std::process::exit(code);
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let command = match cli.command {
        Command::Replay(r) => return replay(&r, cli.out.as_deref()),
        mut command => {
            absolutize(&mut command)?;
            command
        }
    };
    let run = commands::run(&command, cli.seed, cli.out.is_some())?;
    if let Some(out) = &cli.out {
        write_outputs(out, &command, &run)?;
    }
    print!("{}", run.report.stdout);
    Ok(())
}

fn canonical(path: &mut PathBuf) -> Result<(), CliError> {
    *path = std::fs::canonicalize(&*path).map_err(|e| CliError::invalid(e).at(path))?;
    Ok(())
}

/// Resolves input paths so a manifest can be replayed from any directory.
fn absolutize(command: &mut Command) -> Result<(), CliError> {
    match command {
        Command::Rank(a) => canonical(&mut a.input),
        Command::Corrupt(a) => canonical(&mut a.input),
        Command::Attribute(a) => canonical(&mut a.traces),
        Command::Simulate(a) => canonical(&mut a.config),
        Command::Kappa(a) => canonical(&mut a.ratings),
        Command::Gen(a) => canonical(&mut a.models),
        Command::Traces(a) => canonical(&mut a.config),
        Command::Replay(a) => canonical(&mut a.manifest),
    }
}

fn manifest_for(command: &Command, run: &Run) -> RunManifest {
    RunManifest {
        tool: env!("CARGO_BIN_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        invocation: command.clone(),
        seed: run.seed,
        inputs: run.inputs.clone(),
        outputs: run
            .report
            .files
            .iter()
            .map(|(name, bytes)| (name.clone(), sha256_hex(bytes)))
            .collect(),
    }
}

fn write_outputs(out: &Path, command: &Command, run: &Run) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::runtime(e).at(out))?;
    for (name, bytes) in &run.report.files {
        let path = out.join(name);
        std::fs::write(&path, bytes).map_err(|e| CliError::runtime(e).at(&path))?;
    }
    let path = out.join(MANIFEST_FILE);
    std::fs::write(&path, manifest_for(command, run).to_json()).map_err(|e| CliError::runtime(e).at(&path))
}

fn replay(args: &ReplayArgs, out: Option<&Path>) -> Result<(), CliError> {
    let out = out.ok_or_else(|| CliError::invalid("replay needs --out for the re-executed reports"))?;
    let recorded = RunManifest::read(&args.manifest)?;
    if recorded.tool != env!("CARGO_BIN_NAME") {
        return Err(CliError::invalid(format!("manifest was written by `{}`", recorded.tool)).at(&args.manifest));
    }
    let run = commands::run(&recorded.invocation, Some(recorded.seed), true)?;
    for (path, digest) in &recorded.inputs {
        if run.inputs.get(path) != Some(digest) {
            return Err(CliError::invalid("input changed since the manifest was written").at(path));
        }
    }
    write_outputs(out, &recorded.invocation, &run)?;

    let produced = manifest_for(&recorded.invocation, &run).outputs;
    let mut mismatches = 0;
    for (name, digest) in &recorded.outputs {
        let status = match produced.get(name) {
            Some(d) if d == digest => "identical",
            Some(_) => "DIFFERS",
            None => "MISSING",
        };
        mismatches += usize::from(status != "identical");
        println!("{status:<9}  {name}");
    }
    for name in produced.keys().filter(|n| !recorded.outputs.contains_key(*n)) {
        mismatches += 1;
        println!("{:<9}  {name}", "EXTRA");
    }
    if mismatches > 0 {
        return Err(CliError::runtime(format!("{mismatches} report file(s) differ from the manifest")));
    }
    Ok(())
}
