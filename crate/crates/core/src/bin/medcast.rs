fn main() {
    std::process::exit(medcast::cli::main_entry(std::env::args_os()));
}
