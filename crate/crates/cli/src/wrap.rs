use std::io::Write as _;
use std::path::PathBuf;
use std::process::Command;

use clap::Args;

use crate::{synthesize_file, write_report, ToolConfig, ASSEMBLER_ENV, EXIT_SPAWN};

#[derive(Debug, Clone, Args)]
pub struct WrapArgs {
    #[command(flatten)]
    pub config: ToolConfig,
    /// Assembler to run; replaces the program name of the command line.
    #[arg(long, env = ASSEMBLER_ENV)]
    pub assembler: Option<PathBuf>,
    /// Assembler command line: PROGRAM ARGS...
    #[arg(last = true, required = true, num_args = 1..)]
    pub command: Vec<String>,
}

/// Flags whose next argument is an output path, never the input.
const VALUE_FLAGS: &[&str] = &["-o", "--output-file", "-arch", "--gpu-name", "-m", "--machine", "-maxrregcount", "--maxrregcount"];

/// Index into `args` (program name excluded) of the PTX input: the last
/// argument ending in `.ptx` that is not the value of a flag.
pub fn find_ptx_argument(args: &[String]) -> Option<usize> {
    let mut found = None;
    let mut skip = false;
    for (i, a) in args.iter().enumerate() {
        if std::mem::take(&mut skip) {
            continue;
        }
        if VALUE_FLAGS.contains(&a.as_str()) {
            skip = true;
        } else if !a.starts_with('-') && a.ends_with(".ptx") {
            found = Some(i);
        }
    }
    found
}

/// Fail-open: whatever happens during synthesis, the assembler runs exactly once.
pub(crate) fn cmd_wrap(args: &WrapArgs) -> i32 {
    let program = args
        .assembler
        .clone()
        .unwrap_or_else(|| PathBuf::from(&args.command[0]));
    let mut forwarded: Vec<String> = args.command[1..].to_vec();
    // Held until the assembler exits.
    let mut _temp = None;
    match find_ptx_argument(&forwarded) {
        None => eprintln!("warning: no .ptx input among the assembler arguments; forwarding unchanged"),
        Some(i) => match synthesize_file(forwarded[i].as_ref(), &args.config) {
            Ok(s) => {
                let written = tempfile::Builder::new()
                    .prefix("ptxasw-")
                    .suffix(".ptx")
                    .tempfile()
                    .and_then(|mut f| f.write_all(s.text.as_bytes()).map(|_| f));
                match written {
                    Ok(f) => {
                        forwarded[i] = f.path().display().to_string();
                        _temp = Some(f);
                    }
                    Err(e) => eprintln!("warning: cannot write transformed PTX ({e}); assembling the original"),
                }
                if let Err(e) = write_report(&args.config, &s.report) {
                    eprintln!("warning: {e}");
                }
            }
            Err(e) => eprintln!("warning: {e}; assembling the original input"),
        },
    }
    match Command::new(&program).args(&forwarded).status() {
        Ok(status) => status.code().unwrap_or(EXIT_SPAWN),
        Err(e) => {
            eprintln!("error: cannot run {}: {e}", program.display());
            EXIT_SPAWN
        }
    }
}
