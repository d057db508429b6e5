use std::fs;
use std::path::PathBuf;

use ruleflow::model::{Attribute, DataRuleSet};
use ruleflow::notation::{parse_rule_set, serialize, unwrap_continuations};

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/corpus")
}

fn load(name: &str) -> DataRuleSet {
    let text = fs::read_to_string(corpus_dir().join(format!("{name}.rules"))).unwrap();
    parse_rule_set(&unwrap_continuations(&text)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn attr<'a>(rules: &'a DataRuleSet, name: &str) -> Vec<&'a Attribute> {
    rules.attributes().iter().filter(|a| a.name == name).collect()
}

#[test]
fn every_file_parses_and_round_trips() {
    let mut names: Vec<PathBuf> = fs::read_dir(corpus_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "rules"))
        .collect();
    names.sort();
    assert_eq!(names.len(), 17);
    for path in names {
        let text = unwrap_continuations(&fs::read_to_string(&path).unwrap());
        let rules = parse_rule_set(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(!rules.is_empty(), "{}", path.display());
        let canonical = serialize(&rules);
        let again = parse_rule_set(&canonical)
            .unwrap_or_else(|e| panic!("{}: reparse: {e}\n{canonical}", path.display()));
        assert_eq!(again, rules, "{}", path.display());
        assert_eq!(serialize(&again), canonical, "{}", path.display());
    }
}

#[test]
fn statement_counts() {
    let counts = [
        ("cmip6", 6, 6),
        ("personal_communication", 1, 1),
        ("eida", 2, 2),
        ("ingv", 2, 2),
        ("cc_by", 2, 3),
        ("cc_by_namespaced", 3, 3),
        ("gcmt", 4, 4),
        ("cordex", 3, 5),
        ("ismd", 1, 1),
        ("rcmt", 1, 2),
        ("mimic", 4, 4),
        ("cprd", 4, 6),
        ("pima", 1, 1),
        ("isc", 9, 9),
        ("iris", 9, 9),
        ("ogl", 1, 1),
        ("world_bank", 3, 3),
    ];
    for (name, attrs, obs) in counts {
        let rules = load(name);
        assert_eq!(rules.attributes().len(), attrs, "{name} attributes");
        assert_eq!(rules.obligations().len(), obs, "{name} obligations");
    }
}

#[test]
fn displaced_quotes_are_rejoined() {
    assert_eq!(
        attr(&load("cc_by"), "cc_by")[0].value,
        "https://creativecommons.org/licenses/by/4.0/"
    );
    assert_eq!(attr(&load("cc_by_namespaced"), ":provider")[0].value, "Some-Data-Provider");
    let cprd = load("cprd");
    assert!(attr(&cprd, "CPRD_gold_mar")[0].value.ends_with("doi.org/10.48329/WH2F-8168"));
    assert_eq!(attr(&cprd, "CPRD_controlled")[0].value, "https://www.cprd.com/Data-access");
    assert!(attr(&load("world_bank"), "WB_communicate")[0]
        .value
        .ends_with("data@worldbank. org."));
}

#[test]
fn unterminated_quotes_stop_at_last_paren() {
    let eida = load("eida");
    assert!(attr(&eida, "AC_network")[0]
        .value
        .ends_with("<https://doi.org/10.7914/SN/AC>"));
    assert_eq!(eida.obligations().len(), 2);
    let cprd = serialize(&load("cprd"));
    assert!(cprd.contains("user != SomeUserId)"), "{cprd}");
}

#[test]
fn typeless_and_comma_typed_attributes() {
    let cmip6 = load("cmip6");
    assert_eq!(attr(&cmip6, "CMIP6_acknowledge")[0].value_type, "str");
    assert_eq!(attr(&load("cordex"), "CORDEX")[0].value_type, "url");
    let cprd = load("cprd");
    assert_eq!(attr(&cprd, "patient")[0].value, "3");
    assert_eq!(attr(&cprd, "patient")[0].value_type, "column");
}

#[test]
fn duplicate_names_bind_to_nearest_declaration() {
    let gcmt = load("gcmt");
    assert_eq!(attr(&gcmt, "CMT_analysis").len(), 2);
    let bound: Vec<&str> = gcmt
        .obligations()
        .iter()
        .filter(|o| o.def.args.iter().any(|a| a.name == "CMT_analysis"))
        .map(|o| o.def.args[0].value.trim_start())
        .collect();
    assert_eq!(bound.len(), 2);
    assert!(bound.iter().any(|v| v.starts_with("Ekström, G., M. Nettles")));
    assert!(bound.iter().any(|v| v.starts_with("Ekström, G., and M. Nettles")));
}

#[test]
fn process_alias_and_null_condition() {
    let wb = serialize(&load("world_bank"));
    assert!(wb.contains("obligation(Acknowledge WB, [], action = publish)"));
    assert!(wb.contains("obligation(Include WB_communicate, [], null)"));
}

#[test]
fn import_staged_rules() {
    for name in ["cmip6", "personal_communication"] {
        let text = serialize(&load(name));
        assert!(text.contains("stage = import"), "{name}");
    }
}
