fn main() {
    std::process::exit(akmmd::cli::run(std::env::args_os()));
}
