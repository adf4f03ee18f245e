fn main() {
    std::process::exit(ddh::cli::run(std::env::args_os()));
}
