fn main() {
    let (mut out, mut err) = (std::io::stdout().lock(), std::io::stderr().lock());
    let code = cvmx::commands::main_with(std::env::args_os(), &mut cvmx::commands::Io { out: &mut out, err: &mut err });
    std::process::exit(code);
}
