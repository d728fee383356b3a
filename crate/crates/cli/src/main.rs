use clap::Parser;
use nestmax_cli::Cli;

fn main() {
    let cli = Cli::parse();
    match cli.execute() {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
