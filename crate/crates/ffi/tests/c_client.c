#include <math.h>
#include <stdio.h>
#include "dpclust.h"

int main(void) {
    double pts[200];
    for (int i = 0; i < 100; i++) {
        double c = i < 50 ? 0.0 : 5.0;
        pts[2 * i] = c + 0.01 * (i % 7);
        pts[2 * i + 1] = c + 0.01 * (i % 3);
    }
    DpcDataset *ds = NULL;
    if (dpc_dataset_new(pts, 100, 2, 1.0, &ds) != DPC_STATUS_OK) return 1;
    DpcSolution *sol = NULL;
    if (dpc_kmedian(ds, 2, 1.0, 7, &sol) != DPC_STATUS_OK) return 2;
    size_t m = dpc_solution_num_centers(sol);
    double buf[4];
    if (m < 1 || m > 2) return 3;
    if (dpc_solution_centers(sol, buf, 4) != DPC_STATUS_OK) return 4;
    if (!isfinite(dpc_solution_cost(sol))) return 5;
    if (dpc_kmedian(ds, 2, -1.0, 7, &sol) != DPC_STATUS_INVALID_ARGUMENT) return 6;
    if (dpc_last_error_message() == NULL) return 7;
    dpc_dataset_free(ds);
    printf("ok %zu\n", m);
    return 0;
}
