/**
 * Chart view-models derived from the rolling buffers: four groups mirroring
 * the operator display — angles (accelerometer/gyro/filtered overlaid),
 * tilt rate, control action (view pinned to the +/-255 actuator range),
 * and the PWM pair with range-violation flagging.
 */

import { ChannelBuffers, GapMarker, Point } from "./buffers.js";

export interface Series {
  label: string;
  points: Point[];
}

export interface ChartView {
  title: string;
  unit: string;
  series: Series[];
  /** fixed view range, when the chart pins its axis */
  yRange?: [number, number];
  gaps: GapMarker[];
  /** human-readable anomalies (e.g. PWM samples outside 0..255) */
  violations: string[];
}

export function renderChannels(buffers: ChannelBuffers): ChartView[] {
  const ch = buffers.channels;
  const gaps = [...buffers.gaps];

  const pwmViolations: string[] = [];
  for (const side of ["pwm_left", "pwm_right"] as const) {
    for (const p of ch[side].toArray()) {
      if (p.v < 0 || p.v > 255 || !Number.isInteger(p.v)) {
        pwmViolations.push(`${side} out of range at t=${p.t}: ${p.v}`);
      }
    }
  }

  return [
    {
      title: "tilt angle",
      unit: "rad",
      series: [
        { label: "accelerometer", points: ch.theta_acc.toArray() },
        { label: "gyro (integrated)", points: ch.theta_gyro.toArray() },
        { label: "filtered", points: ch.theta_filt.toArray() },
      ],
      gaps,
      violations: [],
    },
    {
      title: "tilt rate",
      unit: "rad/s",
      series: [{ label: "omega", points: ch.omega.toArray() }],
      gaps,
      violations: [],
    },
    {
      title: "control action",
      unit: "counts",
      series: [
        { label: "u", points: ch.u.toArray() },
        { label: "u_sat", points: ch.u_sat.toArray() },
      ],
      yRange: [-255, 255],
      gaps,
      violations: [],
    },
    {
      title: "PWM",
      unit: "counts",
      series: [
        { label: "left", points: ch.pwm_left.toArray() },
        { label: "right", points: ch.pwm_right.toArray() },
      ],
      yRange: [0, 255],
      gaps,
      violations: pwmViolations,
    },
  ];
}
