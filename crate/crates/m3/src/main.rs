fn main() {
    std::process::exit(m3::cli::cli_main(std::env::args_os()));
}
