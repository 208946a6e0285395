fn main() {
    std::process::exit(univar::cli::dispatch(std::env::args_os()));
}
