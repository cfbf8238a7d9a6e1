fn main() {
    std::process::exit(sdf_yolo::cli::main_exit_code());
}
