use std::path::Path;

fn main() {
    let crate_dir = std::env::var("CARGO_MANIFEST_DIR").unwrap();
    let config = cbindgen::Config {
        language: cbindgen::Language::C,
        include_guard: Some("LEXCOMP_H".to_string()),
        cpp_compat: true,
        documentation: true,
        header: Some("/* C interface to the lexcomp lexical-complexity toolkit. */".to_string()),
        ..cbindgen::Config::default()
    };
    cbindgen::Builder::new()
        .with_crate(&crate_dir)
        .with_config(config)
        .generate()
        .expect("cbindgen header generation failed")
        .write_to_file(Path::new(&crate_dir).join("include/lexcomp.h"));
    println!("cargo:rerun-if-changed=src/lib.rs");
}
