fn main() {
    std::process::exit(cavityfill::cli::dispatch(std::env::args_os()));
}
