fn main() {
    std::process::exit(dga_adapt::cli::run(std::env::args_os()));
}
