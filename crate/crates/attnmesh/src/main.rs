fn main() {
    std::process::exit(attnmesh::cli::main_with_args(std::env::args_os()));
}
