#include <stdio.h>
#include <math.h>
#include "silt.h"

int main(void) {
    SiltLaw *law = NULL;
    SiltGreenKernel *k = NULL;
    int64_t o[3] = {0, 0, 0};
    double g = 0.0;
    if (silt_law_nearest_neighbor(1, &law) != SILT_STATUS_OK) return 1;
    if (silt_green_new(law, 2, 1.0, &k) != SILT_STATUS_OK) return 2;
    if (silt_green_value(k, o, o, &g) != SILT_STATUS_OK) return 3;
    if (fabs(g - 2.0 / 3.0) > 1e-15) return 4;
    if (silt_green_new(law, 2, -1.0, &k) != SILT_STATUS_INVALID_ARGUMENT) return 5;
    if (silt_last_error() == NULL) return 6;
    silt_green_free(k);
    silt_law_free(law);
    printf("G(0,0) = %.17g\n", g);
    return 0;
}
