use clap::Parser;

fn main() {
    let cli = wcmdp::cli::Cli::parse();
    if let Err(e) = wcmdp::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
