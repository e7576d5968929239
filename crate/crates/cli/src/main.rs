use clap::Parser;
use credgraph_cli::args::Cli;
use credgraph_cli::{commands, exit_code};

fn main() {
    let cli = Cli::parse();
    let result = cli.flags.resolve().and_then(|cfg| commands::run(cli.command, &cfg));
    match result {
        Ok(summary) => println!(
            "{}",
            serde_json::to_string_pretty(&summary).expect("summary serializes")
        ),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}
