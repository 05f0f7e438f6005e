use clap::Parser;

fn main() {
    let cli = wholebody_teleop::cli::Cli::parse();
    if let Err(e) = wholebody_teleop::cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
