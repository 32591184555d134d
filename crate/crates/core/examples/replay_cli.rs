//! Runs the command-line front end in-process, then replays the run from
//! the config embedded in its output.

use hmm_memory::cli;

fn main() -> std::io::Result<()> {
    let dir = std::env::temp_dir().join("hmm-memory-replay");
    let model = dir.join("model.json");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(&model, r#"{"p": [[0.9, 0.1], [0.2, 0.8]], "q": [[0.9, 0.1], [0.1, 0.9]]}"#)?;

    let first = dir.join("first");
    let code = cli::run(["hmm-memory", "rates", "--seed", "7", "--model", model.to_str().unwrap(), "--out", first.to_str().unwrap()]);
    assert_eq!(code, 0);

    let second = dir.join("second");
    let from = first.join("rates.json");
    cli::run(["hmm-memory", "rates", "--config", from.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    let same = std::fs::read(&from)? == std::fs::read(second.join("rates.json"))?;
    println!("replay identical: {same}");
    Ok(())
}
