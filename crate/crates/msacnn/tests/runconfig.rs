use msacnn::runconfig::*;
use msacnn_core::model::{param_count, ModelSize, Variant};

#[test]
fn text_round_trip() {
    let mut rc = RunConfig::new("cv");
    rc.set("variant", "no_msm:III").unwrap();
    rc.set("channels", "EEG1, EOG1").unwrap();
    rc.set("lr", "0.002").unwrap();
    rc.set("data", "x/y.eps").unwrap();
    rc.set("size", "large").unwrap();
    let back = RunConfig::from_text(&rc.to_text()).unwrap();
    assert_eq!(back, rc);
    assert_eq!(back.variant, Some(Variant::NoMsm(2)));
    assert_eq!(back.channels, ["EEG1", "EOG1"]);
    assert_eq!(back.size, ModelSize::Large);
}

#[test]
fn bad_lines_are_configuration_errors() {
    for text in ["epochs=ten", "colour=blue", "no equals sign", "variant=bogus", "size=medium"] {
        let e = RunConfig::from_text(text).unwrap_err();
        assert!(matches!(e, msacnn::Error::Core(msacnn_core::Error::Config(_))), "{text}");
        assert_eq!(e.exit_code(), 1);
    }
    assert!(RunConfig::from_text("# comment\n\nepochs=3\n").is_ok());
}

#[test]
fn model_and_train_settings() {
    let mut rc = RunConfig::new("cv");
    rc.set("variant", "no_tcm").unwrap();
    assert_eq!(param_count(&rc.model_config(9).unwrap()), 7911);
    rc.set("epochs", "12").unwrap();
    rc.set("head_lr", "0.01").unwrap();
    let cfg = rc.model_config(9).unwrap();
    let tc = rc.train_config(&cfg);
    assert_eq!((tc.epochs, tc.base_lr, tc.head_lr, tc.batch_size), (12, 1e-3, Some(0.01), 64));
}

#[test]
fn scale_runs() {
    assert_eq!(parse_scale_run("I-III").unwrap(), [0, 1, 2]);
    assert_eq!(parse_scale_run("IV").unwrap(), [3]);
    assert!(parse_scale_run("III-I").is_err());
    assert_eq!(scale_run_name(&[1, 2, 3]), "II-IV");
    assert_eq!(msacnn::runner::all_scale_runs().len(), 10);
}
