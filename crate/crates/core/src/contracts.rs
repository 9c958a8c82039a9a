//! CLite sources shipped with the crate.

pub const CROWDSALE: &str = include_str!("../contracts/crowdsale.cl");
pub const GUESS_NUMBER: &str = include_str!("../contracts/guess_number.cl");
/// Owner-guarded nested branch with an unused trailing argument.
pub const VAULT: &str = include_str!("../contracts/vault.cl");
/// Three nested conditionals.
pub const NESTED: &str = include_str!("../contracts/nested3.cl");
/// One function, no state, no branches.
pub const STATELESS: &str = include_str!("../contracts/stateless.cl");

macro_rules! oracle_pairs {
    ($($class:literal => $vuln:literal, $patched:literal;)*) => {
        /// `(bug class, vulnerable source, patched source)` for every oracle.
        pub const ORACLE_FIXTURES: &[(&str, &str, &str)] = &[
            $(($class, include_str!($vuln), include_str!($patched)),)*
        ];
    };
}

oracle_pairs! {
    "BD" => "../contracts/oracles/bd_vuln.cl", "../contracts/oracles/bd_patched.cl";
    "UD" => "../contracts/oracles/ud_vuln.cl", "../contracts/oracles/ud_patched.cl";
    "EF" => "../contracts/oracles/ef_vuln.cl", "../contracts/oracles/ef_patched.cl";
    "IO" => "../contracts/oracles/io_vuln.cl", "../contracts/oracles/io_patched.cl";
    "RE" => "../contracts/oracles/re_vuln.cl", "../contracts/oracles/re_patched.cl";
    "US" => "../contracts/oracles/us_vuln.cl", "../contracts/oracles/us_patched.cl";
    "SE" => "../contracts/oracles/se_vuln.cl", "../contracts/oracles/se_patched.cl";
    "TO" => "../contracts/oracles/to_vuln.cl", "../contracts/oracles/to_patched.cl";
    "UE" => "../contracts/oracles/ue_vuln.cl", "../contracts/oracles/ue_patched.cl";
}

/// Looks up a bundled contract by file stem, e.g. `crowdsale` or `re_vuln`.
pub fn by_name(name: &str) -> Option<&'static str> {
    let main = match name {
        "crowdsale" => Some(CROWDSALE),
        "guess_number" => Some(GUESS_NUMBER),
        "vault" => Some(VAULT),
        "nested3" => Some(NESTED),
        "stateless" => Some(STATELESS),
        _ => None,
    };
    main.or_else(|| {
        let (class, kind) = name.split_once('_')?;
        let (_, v, p) = ORACLE_FIXTURES
            .iter()
            .find(|(c, _, _)| c.eq_ignore_ascii_case(class))?;
        match kind {
            "vuln" => Some(*v),
            "patched" => Some(*p),
            _ => None,
        }
    })
}
