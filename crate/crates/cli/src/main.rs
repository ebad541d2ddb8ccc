fn main() {
    std::process::exit(shearstab_cli::main_with(std::env::args_os()));
}
