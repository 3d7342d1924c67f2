fn main() {
    let seed = std::env::var(sedm::cli::SEED_ENV).ok();
    std::process::exit(sedm::cli::run(std::env::args_os(), seed.as_deref()));
}
