# hand-written three-sample multivariate file
@problemName toyMotion
@univariate false
@timeStamps false
@classLabel true walk run
@data
0.5,1.5,-0.5,2.0:1.0,0.0,3.0,-1.0:0.25,0.75,1.25,1.75:walk
-2.0,0.5,0.5,1.0:0.0,0.25,-0.25,0.125:4.0,3.0,2.0,1.0:run
1.0,1.0,2.0,2.0:-0.5,-1.5,0.5,1.5:0.0,0.0,0.25,0.5:walk
