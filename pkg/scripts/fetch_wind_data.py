#!/usr/bin/env python3
"""Stub: how to obtain the Lake Michigan buoy wind-speed extraction.

The real dataset is not bundled.  It consists of daily average wind speed
(and air temperature) for 2018 from three NOAA National Data Buoy Center
stations on Lake Michigan: cmti2, cnii2 (Chicago area) and hlnm4 (east
shore).  A convenient packaged copy is the `data_buoy` dataset shipped
with the R package `forecastML`, itself assembled from NDBC
(https://www.ndbc.noaa.gov/) via the `rnoaa` package.

To reproduce the extraction:

  1. In R: install.packages("forecastML"); data("data_buoy", package = "forecastML")
  2. Keep stations cmti2, cnii2, hlnm4; filter to calendar year 2018.
  3. Export one row per day with columns
         date, wind_s1, wind_s2, wind_s3, airtemp_s1, airtemp_s2, airtemp_s3
     (stations in the order above), comma-separated, '.' decimals.
  4. Save as data/wind_buoys_2018.csv and fit with, e.g.:

         mtgee fit --data data/wind_buoys_2018.csv \
             --response wind_s1,wind_s2,wind_s3 \
             --exog airtemp_s1,airtemp_s2,airtemp_s3 \
             --lags 2 --method two_step

A 30-row synthetic file of identical shape ships at
data/wind_synthetic.csv for tests and demos.
"""

import sys

if __name__ == "__main__":
    sys.exit(
        "This is a documentation stub; it performs no downloads. "
        "See the module docstring for the extraction recipe."
    )
