#include <stdio.h>
#include <string.h>
#include "photonforge.h"

#define CHECK(cond) do { if (!(cond)) { printf("failed: %s (%s)\n", #cond, pf_last_error()); return 1; } } while (0)

int main(void) {
    CHECK(strlen(pf_version()) > 0);

    uint64_t ts[] = {0, 100, 1000, 1100, 2000, 2150};
    uint16_t ch[] = {0, 1, 0, 1, 0, 1};
    PfStream *s = NULL;
    CHECK(pf_stream_from_arrays(1, 2, ts, ch, 6, &s) == PF_STATUS_OK);
    CHECK(pf_stream_len(s) == 6);

    PfHistogram *h = NULL;
    CHECK(pf_correlate(s, 50, 0.5, 0, 1, &h) == PF_STATUS_OK);
    size_t n = pf_histogram_len(h);
    CHECK(n == 21);
    double tau[21];
    CHECK(pf_histogram_copy(h, tau, NULL, NULL, n) == PF_STATUS_OK);
    CHECK(tau[10] == 0.0);
    CHECK(pf_histogram_copy(h, tau, NULL, NULL, 3) == PF_STATUS_INVALID_ARGUMENT);

    double counts[6] = {5000, 5000, 5000, 5000, 5000, 5000};
    double secs[6] = {1, 1, 1, 1, 1, 1};
    PfPolarization pol;
    CHECK(pf_tomography(counts, secs, &pol) == PF_STATUS_OK);
    CHECK(pol.degree_of_polarization < 1e-6);

    CHECK(pf_stream_read(NULL, &s) == PF_STATUS_NULL_POINTER);
    CHECK(strlen(pf_last_error()) > 0);

    pf_histogram_free(h);
    pf_stream_free(s);
    printf("ok\n");
    return 0;
}
