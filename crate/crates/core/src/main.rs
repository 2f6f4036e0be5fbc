fn main() {
    std::process::exit(dmarf_core::cli::run(std::env::args_os()));
}
