fn main() {
    std::process::exit(sps_core::cli::run(std::env::args_os()));
}
