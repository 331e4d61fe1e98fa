use std::ffi::CStr;
use std::ptr;

use dpclust_ffi::*;

fn grid() -> Vec<f64> {
    let mut pts = Vec::new();
    for (cx, cy) in [(0.0, 0.0), (10.0, 10.0)] {
        for i in 0..50 {
            pts.push(cx + (i % 7) as f64 * 0.01);
            pts.push(cy + (i % 5) as f64 * 0.01);
        }
    }
    pts
}

#[test]
fn kmedian_round_trip() {
    let pts = grid();
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(
            dpc_dataset_new(pts.as_ptr(), 100, 2, 1.0, &mut ds),
            DpcStatus::Ok
        );
        assert_eq!(dpc_dataset_len(ds), 100);
        assert_eq!(dpc_dataset_dim(ds), 2);
        let mut sol = ptr::null_mut();
        assert_eq!(
            dpc_kmedian(ds, 2, f64::INFINITY, 3, &mut sol),
            DpcStatus::Ok
        );
        let m = dpc_solution_num_centers(sol);
        assert!((1..=2).contains(&m));
        assert_eq!(dpc_solution_dim(sol), 2);
        let mut buf = vec![0.0; m * 2];
        assert_eq!(
            dpc_solution_centers(sol, buf.as_mut_ptr(), 1),
            if m * 2 > 1 {
                DpcStatus::BufferTooSmall
            } else {
                DpcStatus::Ok
            }
        );
        assert_eq!(
            dpc_solution_centers(sol, buf.as_mut_ptr(), buf.len()),
            DpcStatus::Ok
        );
        // Centers come back in input coordinates.
        assert!(buf.iter().all(|x| (-1.0..=11.0).contains(x)), "{buf:?}");
        assert!(dpc_solution_cost(sol).is_finite());
        dpc_solution_free(sol);

        assert_eq!(dpc_kmeans(ds, 2, 1.0, 3, &mut sol), DpcStatus::Ok);
        assert!((dpc_solution_epsilon_spent(sol) - 1.0).abs() < 1e-9);
        dpc_solution_free(sol);
        dpc_dataset_free(ds);
    }
}

#[test]
fn errors_are_reported() {
    let pts = grid();
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(
            dpc_dataset_new(ptr::null(), 10, 2, 1.0, &mut ds),
            DpcStatus::NullPointer
        );
        assert!(ds.is_null());
        assert_eq!(
            dpc_dataset_new(pts.as_ptr(), 0, 2, 1.0, &mut ds),
            DpcStatus::DataError
        );
        let bad = [1.0, f64::NAN];
        assert_eq!(
            dpc_dataset_new(bad.as_ptr(), 1, 2, 1.0, &mut ds),
            DpcStatus::DataError
        );

        assert_eq!(
            dpc_dataset_new(pts.as_ptr(), 100, 2, 1.0, &mut ds),
            DpcStatus::Ok
        );
        let mut sol = ptr::null_mut();
        assert_eq!(
            dpc_kmedian(ds, 2, -1.0, 0, &mut sol),
            DpcStatus::InvalidArgument
        );
        assert!(sol.is_null());
        let msg = CStr::from_ptr(dpc_last_error_message()).to_str().unwrap();
        assert!(msg.contains("epsilon"), "{msg}");
        assert_eq!(
            dpc_kmedian(ds, 0, 1.0, 0, &mut sol),
            DpcStatus::InvalidArgument
        );
        assert_eq!(
            dpc_kmedian(ptr::null(), 2, 1.0, 0, &mut sol),
            DpcStatus::NullPointer
        );
        dpc_dataset_free(ds);
        dpc_dataset_free(ptr::null_mut());
        dpc_solution_free(ptr::null_mut());
        assert_eq!(dpc_solution_num_centers(ptr::null()), 0);
        assert!(dpc_solution_cost(ptr::null()).is_nan());
    }
}
