use std::ffi::{CStr, CString};
use std::ptr;

use pkgee::gee::{solve, SolverConfig, WorkingModel};
use pkgee::inference::{Contrast, InferenceContext, PkParameter, VarianceKind};
use pkgee::sim::{generate_dataset, ScenarioConfig};
use pkgee_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(pkgee_last_error_message()) }.to_string_lossy().into_owned()
}

fn load(ds: *mut PkgeeDataset, data: &pkgee::sim::SimulatedDataset) {
    for s in &data.subjects {
        let id = CString::new(s.subject_id.as_str()).unwrap();
        let conc: Vec<f64> = s.log_conc().iter().map(|y| y.exp()).collect();
        let status = unsafe {
            pkgee_dataset_add_subject(
                ds,
                id.as_ptr(),
                s.infusion.dose(),
                s.infusion.t_in(),
                s.genotype.minor_allele_count() as i32,
                s.times().as_ptr(),
                conc.as_ptr(),
                conc.len(),
            )
        };
        assert_eq!(status, PkgeeStatus::Ok, "{}", last_error());
    }
}

#[test]
fn fit_through_the_c_api_matches_the_library() {
    let cfg = ScenarioConfig::paper(4, 0.5).unwrap();
    let data = generate_dataset(&cfg, 0).unwrap();
    let ds = pkgee_dataset_new();
    load(ds, &data);
    assert_eq!(unsafe { pkgee_dataset_len(ds) }, data.subjects.len());

    let mut fit = ptr::null_mut();
    assert_eq!(unsafe { pkgee_fit(ds, &mut fit) }, PkgeeStatus::Ok, "{}", last_error());
    assert!(!fit.is_null());

    // Library fit on the same data after the exp/ln round trip the C side sees.
    let subjects: Vec<_> = data
        .subjects
        .iter()
        .map(|s| {
            let y = s.log_conc().iter().map(|y| y.exp().ln()).collect();
            pkgee::gee::SubjectRecord::new(
                s.subject_id.clone(),
                s.infusion,
                s.times().to_vec(),
                y,
                s.genotype,
            )
            .unwrap()
        })
        .collect();
    let direct = solve(&subjects, &WorkingModel::default(), &SolverConfig::default()).unwrap();

    let mut beta = [0.0; PKGEE_NUM_COEFFICIENTS];
    assert_eq!(unsafe { pkgee_fit_coefficients(fit, beta.as_mut_ptr()) }, PkgeeStatus::Ok);
    assert_eq!(beta, direct.beta_hat);
    assert_eq!(unsafe { pkgee_fit_iterations(fit) }, direct.iterations);

    let ctx = InferenceContext::new(&direct).unwrap();
    let cov = ctx.covariance(VarianceKind::BiasCorrected).unwrap();
    let want = ctx.wald(&cov, &Contrast::coefficient(1).columns()[0]).unwrap();
    let mut got = PkgeeTestResult {
        statistic: 0.0,
        df_numerator: 0.0,
        df_denominator: 0.0,
        p_value: 0.0,
        low_df: false,
    };
    assert_eq!(unsafe { pkgee_fit_wald(fit, 1, 1, &mut got) }, PkgeeStatus::Ok);
    assert_eq!(got.statistic, want.statistic);
    assert_eq!(got.p_value, want.p_value);
    assert_eq!(got.df_denominator, want.df_denominator);

    let want = ctx.f_test(&cov, &Contrast::parameter(PkParameter::K12)).unwrap();
    assert_eq!(unsafe { pkgee_fit_f(fit, 2, 1, &mut got) }, PkgeeStatus::Ok);
    assert_eq!(got.df_numerator, 2.0);
    assert_eq!(got.p_value, want.p_value);

    unsafe {
        pkgee_fit_free(fit);
        pkgee_dataset_free(ds);
    }
}

#[test]
fn invalid_arguments_report_status_and_message() {
    let mut out = 0.0;
    let mut fit = ptr::null_mut();
    assert_eq!(unsafe { pkgee_fit(ptr::null(), &mut fit) }, PkgeeStatus::NullPointer);
    assert!(!last_error().is_empty());
    assert_eq!(
        unsafe { pkgee_concentration(3.0, 1.0, -1.0, 0.0, 100.0, 0.5, 1.0, ptr::null_mut()) },
        PkgeeStatus::NullPointer
    );

    let ds = pkgee_dataset_new();
    let id = CString::new("s1").unwrap();
    let times = [0.5, 1.0];
    let conc = [1.0, -2.0];
    let status = unsafe {
        pkgee_dataset_add_subject(ds, id.as_ptr(), 100.0, 0.5, 0, times.as_ptr(), conc.as_ptr(), 2)
    };
    assert_eq!(status, PkgeeStatus::InvalidArgument);
    let status = unsafe {
        pkgee_dataset_add_subject(ds, id.as_ptr(), 100.0, 0.5, 3, times.as_ptr(), times.as_ptr(), 2)
    };
    assert_eq!(status, PkgeeStatus::InvalidArgument);
    assert!(last_error().contains("genotype"), "{}", last_error());
    assert_eq!(unsafe { pkgee_dataset_len(ds) }, 0);

    // No subjects at all: nothing to fit.
    assert_ne!(unsafe { pkgee_fit(ds, &mut fit) }, PkgeeStatus::Ok);
    assert!(fit.is_null());
    unsafe { pkgee_dataset_free(ds) };

    assert_eq!(
        unsafe { pkgee_concentration(3.72, 1.38, -1.89, -0.35, 1400.0, 0.5, 1.0, &mut out) },
        PkgeeStatus::Ok
    );
    assert!(out > 0.0);
    unsafe {
        pkgee_fit_free(ptr::null_mut());
        pkgee_dataset_free(ptr::null_mut());
    }
}

#[test]
fn header_declares_the_exported_functions() {
    let header = include_str!("../include/pkgee.h");
    for name in [
        "pkgee_last_error_message",
        "pkgee_dataset_new",
        "pkgee_dataset_free",
        "pkgee_dataset_add_subject",
        "pkgee_fit(",
        "pkgee_fit_free",
        "pkgee_fit_coefficients",
        "pkgee_fit_wald",
        "pkgee_fit_f(",
        "pkgee_concentration",
        "PKGEE_STATUS_NOT_ESTIMABLE = 6",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
