use std::process::exit;

fn main() {
    match riskstop_cli::run() {
        Ok(code) => exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            exit(1);
        }
    }
}
