fn main() {
    std::process::exit(lorentz_align::cli::run(std::env::args_os()));
}
