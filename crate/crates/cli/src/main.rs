fn main() {
    std::process::exit(oneshot_cli::cli::dispatch(std::env::args_os()));
}
