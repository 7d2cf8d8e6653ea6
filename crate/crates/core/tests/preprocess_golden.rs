use biobridge::corpus::PIRecord;
use biobridge::preprocess::{
    decode_abbreviations, load_lexicon, normalize_spacing, preprocess_record, AbbrevLexicon,
};

const CASES: &str = include_str!("golden/preprocess_cases.tsv");

fn lexicon() -> AbbrevLexicon {
    load_lexicon(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/two_entry_lexicon.tsv")).unwrap()
}

fn cases() -> Vec<[&'static str; 3]> {
    CASES
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            assert_eq!(f.len(), 3, "bad golden line {l:?}");
            [f[0], f[1], f[2]]
        })
        .collect()
}

#[test]
fn golden_decode_and_spacing() {
    let lex = lexicon();
    assert_eq!(lex.len(), 2);
    let cases = cases();
    assert!(cases.len() >= 10);
    for [input, decoded, preprocessed] in cases {
        assert_eq!(decode_abbreviations(input, &lex), decoded, "decode {input:?}");
        assert_eq!(normalize_spacing(decoded), preprocessed, "spacing {input:?}");
        let rec = preprocess_record(&PIRecord::new("g", input, 1), &lex).unwrap();
        assert_eq!(rec.text, preprocessed);
        assert_eq!((rec.id.as_str(), rec.label), ("g", 1));
    }
}

#[test]
fn starter_lexicon_has_both_mappings() {
    let lex = AbbrevLexicon::starter();
    assert_eq!(decode_abbreviations("C/S/R 있음", &lex), "Cough/Sputum/Rhinorrhea 있음");
    assert_eq!(decode_abbreviations("BT 39.2", &lex), "Body Temperature 39.2");
    // the longer symbol wins over its prefix
    assert_eq!(decode_abbreviations("N/V/D", &lex), "Nausea/Vomiting/Diarrhea");
}

#[test]
fn record_that_empties_is_rejected() {
    let lex = lexicon();
    assert!(preprocess_record(&PIRecord::new("e", "   ", 0), &lex).is_err());
}
