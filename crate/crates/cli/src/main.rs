use clap::Parser;

fn main() {
    let cli = mtm_lab::Cli::parse();
    if let Err(e) = mtm_lab::execute(&cli) {
        eprintln!("mtm-lab: {e}");
        std::process::exit(e.exit_code());
    }
}
