fn main() {
    std::process::exit(medcurve::cli::run(std::env::args_os()));
}
