"""BalCol 动力核心

mimetic1d 垂直有限元空间与算子，thermo 状态方程与能量，
balanced_integrator 逐列拟 Newton 隐式求解，hevi_driver TRAP(2,3,2) 推进，
diagnostics 能量收支账本与 CSV。
"""
