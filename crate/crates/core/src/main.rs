fn main() {
    std::process::exit(mvsdde::cli::run(std::env::args_os()));
}
