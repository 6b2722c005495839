//! Scenarios bundled with the binary.

pub struct Example {
    pub name: &'static str,
    pub text: &'static str,
}

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        &[$(Example { name: $name, text: include_str!(concat!("../scenarios/", $name, ".toml")) }),*]
    };
}

pub const EXAMPLES: &[Example] = bundled![
    "two_mode_antibunching",
    "three_mode_antibunching",
    "weak_kerr",
    "dissipative_entanglement",
    "bistability",
    "chain_wigner",
    "cross_check",
    "trajectories",
];

pub fn find(name: &str) -> Option<&'static Example> {
    EXAMPLES.iter().find(|e| e.name == name)
}

impl Example {
    /// First comment line of the file.
    pub fn summary(&self) -> &'static str {
        self.text.lines().find_map(|l| l.strip_prefix('#')).map(str::trim).unwrap_or("")
    }
}
