// Explicit backward march with the blow-up monitor. For `u' = −u²` with
// `u(1) = g` the solution explodes at `t* = 1 − 1/g`.

use mie::cli::files::write_trace_csv;
use mie::solver::{march_with_blowup_monitor, BlowupTrigger};
use mie::{Domain, Generator, MarkovChainModel, TimeGrid};
use ndarray::array;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let f = Generator::make_power(vec![0.0, 0.0, -1.0], Domain::all(1))?;
    let chain = MarkovChainModel::identity(1, 4000)?;
    let grid = TimeGrid::build_uniform(1.0, 4000, None)?;
    for g in [2.0, 1.0 / 0.3, 0.5] {
        let (partial, report) =
            march_with_blowup_monitor(&chain, &grid, &f, array![[g]].view(), 1e-2)?;
        match report.blowup {
            Some(rec) => {
                println!(
                    "g = {g:.3}: halted at t = {:.4} ({:?}), exact t* = {:.4}, field kept from node {}",
                    rec.t_minus_estimate,
                    rec.trigger,
                    1.0 - 1.0 / g,
                    partial.start_index()
                );
                assert_eq!(rec.trigger, BlowupTrigger::Growth);
                let mut tail = Vec::new();
                write_trace_csv(&mut tail, &rec.trace[rec.trace.len() - 3..])?;
                print!("{}", String::from_utf8(tail)?);
            }
            None => println!("g = {g:.3}: no blow-up, u(0) = {:.4}", partial.scalar(0, 0)),
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
