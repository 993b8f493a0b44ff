fn main() {
    std::process::exit(sde_recover::cli::run(std::env::args_os()));
}
