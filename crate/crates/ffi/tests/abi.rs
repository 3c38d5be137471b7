use std::ffi::CStr;
use std::ptr;

use hsa_ffi::*;

#[test]
fn build_aggregate_free() {
    let mut s = ptr::null_mut();
    unsafe {
        assert_eq!(hsa_scheme_new(6, 4, 2, 3, 0, 4, 5, &mut s), HsaStatus::Ok);
        let mut params = [0u64; 6];
        assert_eq!(hsa_scheme_params(s, params.as_mut_ptr()), HsaStatus::Ok);
        assert_eq!(params, [6, 4, 2, 3, 13, 4]);
        let models: Vec<u64> = (0..24).map(|i| i % 3).collect();
        let mut sum = [0u64; 4];
        let ok = [1u8, 0, 1, 0, 1, 1];
        assert_eq!(hsa_aggregate(s, models.as_ptr(), ok.as_ptr(), sum.as_mut_ptr()), HsaStatus::Ok);
        let want: Vec<u64> = (0..4).map(|l| (0..6).map(|k| models[k * 4 + l]).sum()).collect();
        assert_eq!(sum.to_vec(), want);
        hsa_scheme_free(s);
    }
}

#[test]
fn errors_carry_messages() {
    unsafe {
        assert_eq!(hsa_scheme_new(5, 3, 1, 3, 0, 2, 0, ptr::null_mut()), HsaStatus::NullPointer);
        let mut s = ptr::null_mut();
        assert_eq!(hsa_scheme_new(5, 3, 1, 3, 7, 2, 0, &mut s), HsaStatus::InvalidParams);
        assert!(s.is_null());
        let mut buf = [0 as std::ffi::c_char; 8];
        let n = hsa_last_error(buf.as_mut_ptr(), buf.len());
        assert!(n >= buf.len(), "message should not fit in 8 bytes");
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_bytes().len(), 7);
        assert_eq!(hsa_aggregate(ptr::null(), ptr::null(), ptr::null(), ptr::null_mut()), HsaStatus::NullPointer);
        hsa_scheme_free(ptr::null_mut());
    }
}

#[test]
fn model_entries_out_of_alphabet_are_rejected() {
    let mut s = ptr::null_mut();
    unsafe {
        assert_eq!(hsa_scheme_example(0, &mut s), HsaStatus::Ok);
        let models = [3u64; 10];
        let mut sum = [0u64; 2];
        assert_eq!(hsa_aggregate(s, models.as_ptr(), ptr::null(), sum.as_mut_ptr()), HsaStatus::InvalidParams);
        hsa_scheme_free(s);
    }
}

#[test]
fn example_verifies_and_audits_clean() {
    assert_eq!(hsa_verify_example(), HsaStatus::Ok);
    let mut s = ptr::null_mut();
    let (mut relay, mut server) = (9usize, 9usize);
    unsafe {
        assert_eq!(hsa_scheme_example(3, &mut s), HsaStatus::Ok);
        assert_eq!(hsa_audit(s, &mut relay, &mut server), HsaStatus::Ok);
        hsa_scheme_free(s);
    }
    assert_eq!((relay, server), (0, 0));
}

#[test]
fn status_names() {
    let name = unsafe { CStr::from_ptr(hsa_status_name(HsaStatus::ConstructionFailed)) };
    assert_eq!(name.to_str().unwrap(), "construction failed");
}
