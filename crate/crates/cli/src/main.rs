use clap::Parser;

fn main() -> anyhow::Result<()> {
    gedan_cli::run(gedan_cli::Cli::parse())
}
