// The command-line interface driven in-process on the shipped scenario
// files. The configs are copied to a scratch directory so that relative
// paths in `[verify]` line up with the output directory.

use std::path::Path;

use mie::cli::{run, EXIT_OK};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/configs");
    let work = tempfile::tempdir()?;
    for entry in std::fs::read_dir(&src)? {
        let entry = entry?;
        std::fs::copy(entry.path(), work.path().join(entry.file_name()))?;
    }
    let out = work.path().join("out");
    let steps = [
        ("solve", "solve.toml"),
        ("solve", "solve_perturbed.toml"),
        ("verify", "verify_growth.toml"),
        ("verify", "verify_comparison.toml"),
        ("blowup", "blowup.toml"),
        ("fk", "fk.toml"),
        ("mechanism", "mechanism.toml"),
        ("coshsinh", "coshsinh.toml"),
    ];
    for (cmd, file) in steps {
        let config = work.path().join(file);
        let args = [
            "mie",
            cmd,
            "--config",
            config.to_str().unwrap(),
            "--out-dir",
            out.to_str().unwrap(),
        ];
        let code = run(args);
        println!("mie {cmd} --config {file} -> exit {code}");
        if code != EXIT_OK {
            return Err(format!("{cmd} on {file} exited with {code}").into());
        }
    }
    let report = std::fs::read_to_string(out.join("blowup_report.json"))?;
    let value: serde_json::Value = serde_json::from_str(&report)?;
    println!("blow-up estimate {}", value["blowup"]["t_minus_estimate"]);
    let mut names: Vec<_> = std::fs::read_dir(&out)?
        .flatten()
        .map(|e| e.file_name().into_string().unwrap())
        .collect();
    names.sort();
    println!("artifacts: {}", names.join(", "));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
