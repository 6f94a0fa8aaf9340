//! JSON serialization and the in-process CLI.
//!
//! Round-trips an instrument through the instrument.v1 format, then drives
//! the `qirt` command-line interface in process to classify it and to print
//! the closed-form depolarizing thresholds as a report.v1 document.

use qirt::qobjects::{pauli_example_instrument, Instrument};

fn main() -> qirt::Result<()> {
    let inst = pauli_example_instrument();
    let json = serde_json::to_string_pretty(&inst.to_json())?;
    let back = Instrument::from_json(&serde_json::from_str(&json)?)?;
    println!("instrument.v1 round-trip: {} outcomes, dims {}x{}", back.n_outcomes(), back.dim_in, back.dim_out);

    let dir = std::env::temp_dir().join("qirt-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("instrument.json");
    std::fs::write(&path, &json)?;

    let (code, report, _) = qirt::cli::run_captured([
        "qirt", "classify", "--class", "web", path.to_str().expect("utf-8 path"),
    ]);
    println!("`qirt classify --class web` exit code = {code}");
    println!("{report}");

    let (code, report, _) =
        qirt::cli::run_captured(["qirt", "--stable", "thresholds", "--d", "2", "--n", "2"]);
    assert_eq!(code, 0);
    println!("{report}");
    Ok(())
}
