#include <math.h>
#include <stdio.h>
#include "pkgee.h"

int main(void) {
    double c = 0.0;
    if (pkgee_concentration(3.72, 1.38, -1.89, -0.35, 1400.0, 0.5, 1.0, &c) != PKGEE_STATUS_OK || !(c > 0.0)) {
        return 1;
    }
    if (pkgee_concentration(3.72, 1.38, -1.89, -0.35, 1400.0, 0.5, 1.0, NULL) != PKGEE_STATUS_NULL_POINTER) {
        return 2;
    }
    PkgeeDataset *ds = pkgee_dataset_new();
    double times[2] = {0.5, 1.0};
    double conc[2] = {1.0, 0.5};
    if (pkgee_dataset_add_subject(ds, "s1", 100.0, 0.5, 7, times, conc, 2) != PKGEE_STATUS_INVALID_ARGUMENT) {
        return 3;
    }
    if (pkgee_last_error_message()[0] == '\0') {
        return 4;
    }
    pkgee_dataset_free(ds);
    printf("%.17g\n", c);
    return 0;
}
