use clap::Parser;

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    grasshap_server::cli::run(grasshap_server::cli::Cli::parse())
}
