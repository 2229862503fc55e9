// Fields on disk: `node_time,state,u_1..u_k` with shortest round-trip
// floats, so a file read back reproduces the field exactly.

use mie::cli::files::{read_field_csv, write_field_csv};
use mie::solver::picard_solve;
use mie::{Domain, Generator, MarkovChainModel, PicardOptions, TimeGrid};
use ndarray::array;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let grid = TimeGrid::build_uniform(0.3, 3, None)?;
    let chain = MarkovChainModel::homogeneous(array![[0.5, 0.5], [0.0, 1.0]], 3)?;
    let f = Generator::make_power(vec![0.1, 0.0, -1.0], Domain::all(1))?;
    let (u, _) = picard_solve(
        &chain,
        &grid,
        &f,
        array![[1.0 / 3.0], [2.0]].view(),
        &PicardOptions::default(),
    )?;
    let mut buf = Vec::new();
    write_field_csv(&mut buf, &u)?;
    print!("{}", String::from_utf8(buf.clone())?);
    let back = read_field_csv(buf.as_slice(), &grid)?;
    assert_eq!(back, u);
    println!("read back bit for bit");
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
