use clap::Parser;

fn main() {
    let cli = hjb::Cli::parse();
    if let Err(e) = hjb::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
