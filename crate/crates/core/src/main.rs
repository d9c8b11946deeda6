use std::process::ExitCode;

fn main() -> ExitCode {
    tensor_impute::cli::main()
}
